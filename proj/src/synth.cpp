#include "neurodec/synth.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "neurodec/checkpoint.hpp"
#include "neurodec/errors.hpp"
#include "neurodec/rng.hpp"

namespace neurodec {

namespace {

constexpr std::size_t kPool = 8;  // pooled feature grid is kPool x kPool x 3

constexpr std::array<std::array<double, 3>, 10> kColours = {{
    {0.90, 0.10, 0.10},
    {0.10, 0.80, 0.10},
    {0.15, 0.25, 0.95},
    {0.95, 0.90, 0.10},
    {0.90, 0.10, 0.85},
    {0.10, 0.85, 0.90},
    {1.00, 0.55, 0.00},
    {0.50, 0.20, 0.70},
    {0.95, 0.95, 0.95},
    {0.55, 0.35, 0.15},
}};
constexpr double kBackground = 0.1;

bool inside(std::size_t shape, double dx, double dy) {
    const double ax = std::abs(dx), ay = std::abs(dy), r2 = dx * dx + dy * dy;
    switch (shape) {
        case 0: return r2 <= 1.0;
        case 1: return std::max(ax, ay) <= 0.85;
        case 2: return dy >= -0.85 && dy <= 0.85 && ax <= 0.95 * (dy + 0.85) / 1.7;
        case 3: return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);
        case 4: return r2 <= 1.0 && r2 >= 0.3;
        case 5: return ax + ay <= 1.0;
        case 6: return ay <= 0.35 && ax <= 1.0;
        case 7: return ax <= 0.35 && ay <= 1.0;
        case 8: return std::abs(ax - ay) <= 0.3 && std::max(ax, ay) <= 0.95;
        default: return r2 <= 1.0 && dy >= 0.0;
    }
}

// Moving average of width `len` along a vector (zero padded, centred).
void box_smooth(const double* in, double* out, std::size_t n, std::size_t len) {
    if (len <= 1) {
        std::copy(in, in + n, out);
        return;
    }
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(len / 2);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < len; ++j) {
            const std::ptrdiff_t p = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(j) - half;
            if (p >= 0 && p < static_cast<std::ptrdiff_t>(n)) s += in[p];
        }
        out[i] = s / static_cast<double>(len);
    }
}

Tensor pooled_features(const Tensor& image, std::size_t size) {
    const std::size_t cell = size / kPool;
    Tensor f({kPool * kPool * 3});
    for (std::size_t gy = 0; gy < kPool; ++gy)
        for (std::size_t gx = 0; gx < kPool; ++gx)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t y = gy * cell; y < (gy + 1) * cell; ++y)
                    for (std::size_t x = gx * cell; x < (gx + 1) * cell; ++x) s += image.at(y * size + x, c);
                f[(gy * kPool + gx) * 3 + c] = s / static_cast<double>(cell * cell) - kBackground;
            }
    return f;
}

}  // namespace

void SynthConfig::validate() const {
    if (n_voxels == 0 || patch == 0 || n_voxels % patch != 0) {
        throw ConfigError("synth: n_voxels " + std::to_string(n_voxels) + " must be a positive multiple of patch " +
                          std::to_string(patch));
    }
    if (image_size < kPool || image_size % kPool != 0) {
        throw ConfigError("synth: image_size must be a positive multiple of " + std::to_string(kPool));
    }
    if (n_classes < 1 || n_classes > 100) throw ConfigError("synth: n_classes must be in [1, 100]");
    if (n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
    if (holdout_classes >= n_classes && holdout_classes > 0) throw ConfigError("synth: holdout_classes >= n_classes");
    if (!(snr > 0.0)) throw ConfigError("synth: snr must be positive");
    if (redundancy_len < 1) throw ConfigError("synth: redundancy_len must be >= 1");
}

Tensor PairedDataset::voxel_row(std::size_t i) const {
    const std::size_t n = voxels.cols();
    Tensor out({1, n});
    std::copy_n(voxels.data() + i * n, n, out.data());
    return out;
}

Tensor PairedDataset::image(std::size_t i) const {
    const std::size_t s = config.image_size;
    Tensor out({s * s, 3});
    std::copy_n(images.data() + i * s * s * 3, s * s * 3, out.data());
    return out;
}

std::vector<std::size_t> PairedDataset::select(const std::vector<std::size_t>& split, std::size_t subject) const {
    std::vector<std::size_t> out;
    for (auto i : split)
        if (subject == static_cast<std::size_t>(-1) || subjects[i] == subject) out.push_back(i);
    return out;
}

Tensor render_scene(std::size_t label, std::size_t size, std::uint64_t rng_seed, std::size_t n_classes) {
    if (label >= n_classes) throw ContractError("render_scene: label out of range");
    Rng rng(rng_seed);
    const std::size_t shape = label % 10;
    const auto& colour = kColours[(label % 10 + label / 10) % 10];
    const double s = static_cast<double>(size);
    const double radius = s * rng.uniform(0.22, 0.32);
    const double cx = s / 2 + rng.uniform(-0.15, 0.15) * s;
    const double cy = s / 2 + rng.uniform(-0.15, 0.15) * s;
    Tensor img({size * size, 3}, kBackground);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            // 2x2 supersampling for soft edges
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const double px = static_cast<double>(x) + 0.25 + 0.5 * sx;
                    const double py = static_cast<double>(y) + 0.25 + 0.5 * sy;
                    hits += inside(shape, (px - cx) / radius, (py - cy) / radius) ? 1 : 0;
                }
            const double a = hits / 4.0;
            for (std::size_t c = 0; c < 3; ++c) img.at(y * size + x, c) = (1 - a) * kBackground + a * colour[c];
        }
    return img;
}

PairedDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng master(cfg.seed);
    const std::size_t nf = kPool * kPool * 3, nv = cfg.n_voxels, size = cfg.image_size;

    // Subject encodings: smooth(W_s) applied to features equals smooth(W_s f).
    Rng wrng = master.derive(1);
    const Tensor shared = wrng.normal_tensor({nv, nf}, 1.0 / std::sqrt(static_cast<double>(nf)));
    std::vector<Tensor> encoders;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
        Rng srng = master.derive(100 + s);
        Tensor w = shared;
        Tensor pert = srng.normal_tensor({nv, nf}, cfg.subject_variation / std::sqrt(static_cast<double>(nf)));
        for (std::size_t i = 0; i < w.numel(); ++i) w[i] += pert[i];
        Tensor sm({nv, nf});
        std::vector<double> col(nv), out(nv);
        for (std::size_t j = 0; j < nf; ++j) {
            for (std::size_t i = 0; i < nv; ++i) col[i] = w.at(i, j);
            box_smooth(col.data(), out.data(), nv, cfg.redundancy_len);
            for (std::size_t i = 0; i < nv; ++i) sm.at(i, j) = out[i];
        }
        encoders.push_back(std::move(sm));
    }
    // Low-rank background directions, smooth like the signal.
    Rng brng = master.derive(2);
    Tensor background({cfg.background_rank, nv});
    for (std::size_t r = 0; r < cfg.background_rank; ++r) {
        Tensor raw = brng.normal_tensor({nv});
        box_smooth(raw.data(), background.data() + r * nv, nv, cfg.redundancy_len);
        double norm = 0;
        for (std::size_t i = 0; i < nv; ++i) norm += background[r * nv + i] * background[r * nv + i];
        norm = std::sqrt(norm / static_cast<double>(nv));
        for (std::size_t i = 0; i < nv; ++i) background[r * nv + i] /= norm;
    }

    PairedDataset ds;
    ds.config = cfg;
    const std::size_t held_from = cfg.n_classes - cfg.holdout_classes;
    for (std::size_t s = 0; s < cfg.n_subjects; ++s)
        for (std::size_t c = 0; c < cfg.n_classes; ++c) {
            const bool held = c >= held_from;
            const std::size_t n_train = held ? 0 : cfg.train_per_class;
            for (std::size_t k = 0; k < n_train + cfg.test_per_class; ++k) {
                (k < n_train ? ds.train : ds.test).push_back(ds.labels.size());
                ds.labels.push_back(c);
                ds.subjects.push_back(s);
            }
        }
    const std::size_t n = ds.labels.size();
    ds.images = Tensor({n, size * size * 3});
    Tensor signal({n, nv});

#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor img = render_scene(ds.labels[i], size, master.derive(1000000 + i).seed(), cfg.n_classes);
        std::copy_n(img.data(), img.numel(), ds.images.data() + i * img.numel());
        const Tensor f = pooled_features(img, size);
        const Tensor& w = encoders[ds.subjects[i]];
        for (std::size_t v = 0; v < nv; ++v) {
            double acc = 0;
            for (std::size_t j = 0; j < nf; ++j) acc += w.at(v, j) * f[j];
            signal.at(i, v) = acc;
        }
    }
    double var = 0;
    for (double x : signal.values()) var += x * x;
    const double sig_scale = 1.0 / std::sqrt(var / static_cast<double>(signal.numel()));

    ds.voxels = Tensor({n, nv});
    const double noise = 1.0 / cfg.snr;
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        Rng nrng = master.derive(2000000 + i);
        double* row = ds.voxels.data() + i * nv;
        for (std::size_t v = 0; v < nv; ++v) row[v] = sig_scale * signal.at(i, v) + 0.8 * noise * nrng.normal();
        for (std::size_t r = 0; r < cfg.background_rank; ++r) {
            const double c = 0.6 * noise * nrng.normal();
            for (std::size_t v = 0; v < nv; ++v) row[v] += c * background[r * nv + v];
        }
        double mean = 0, sq = 0;
        for (std::size_t v = 0; v < nv; ++v) mean += row[v];
        mean /= static_cast<double>(nv);
        for (std::size_t v = 0; v < nv; ++v) sq += (row[v] - mean) * (row[v] - mean);
        const double inv = 1.0 / std::sqrt(sq / static_cast<double>(nv) + 1e-12);
        for (std::size_t v = 0; v < nv; ++v) row[v] = (row[v] - mean) * inv;
    }
    return ds;
}

namespace {

Tensor index_tensor(const std::vector<std::size_t>& v) {
    Tensor t({v.size()});
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<double>(v[i]);
    return t;
}

std::vector<std::size_t> index_vector(const Tensor& t) {
    std::vector<std::size_t> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::size_t>(t[i]);
    return v;
}

nlohmann::json config_json(const SynthConfig& c) {
    return {{"n_voxels", c.n_voxels},
            {"image_size", c.image_size},
            {"n_classes", c.n_classes},
            {"n_subjects", c.n_subjects},
            {"train_per_class", c.train_per_class},
            {"test_per_class", c.test_per_class},
            {"snr", c.snr},
            {"redundancy_len", c.redundancy_len},
            {"subject_variation", c.subject_variation},
            {"background_rank", c.background_rank},
            {"holdout_classes", c.holdout_classes},
            {"patch", c.patch},
            {"seed", c.seed}};
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const PairedDataset& ds) {
    std::filesystem::create_directories(dir);
    Checkpoint ck;
    ck.meta = {{"kind", "paired-dataset"},
               {"dataset_version", kDatasetVersion},
               {"count", ds.size()},
               {"n_classes", ds.config.n_classes},
               {"voxel_shape", ds.voxels.shape()},
               {"image_shape", {ds.config.image_size, ds.config.image_size, 3}},
               {"seed", ds.config.seed},
               {"config", config_json(ds.config)}};
    ck.tensors.emplace_back("voxels", ds.voxels);
    ck.tensors.emplace_back("images", ds.images);
    ck.tensors.emplace_back("labels", index_tensor(ds.labels));
    ck.tensors.emplace_back("subjects", index_tensor(ds.subjects));
    ck.tensors.emplace_back("train", index_tensor(ds.train));
    ck.tensors.emplace_back("test", index_tensor(ds.test));
    save_checkpoint(dir / "dataset.json", ck);
}

PairedDataset load_dataset(const std::filesystem::path& dir) {
    const Checkpoint ck = load_checkpoint(dir / "dataset.json");
    if (ck.meta.value("kind", "") != "paired-dataset") throw FormatError("dataset: not a paired-dataset manifest");
    if (ck.meta.value("dataset_version", -1) != kDatasetVersion) {
        throw FormatError("dataset: version " + ck.meta.value("dataset_version", nlohmann::json(-1)).dump() +
                          " unsupported (expected " + std::to_string(kDatasetVersion) + ")");
    }
    auto need = [&](const char* name) -> const Tensor& {
        const Tensor* t = ck.find(name);
        if (!t) throw FormatError(std::string("dataset: missing array ") + name);
        return *t;
    };
    PairedDataset ds;
    const auto& c = ck.meta.at("config");
    ds.config.n_voxels = c.at("n_voxels");
    ds.config.image_size = c.at("image_size");
    ds.config.n_classes = c.at("n_classes");
    ds.config.n_subjects = c.at("n_subjects");
    ds.config.train_per_class = c.at("train_per_class");
    ds.config.test_per_class = c.at("test_per_class");
    ds.config.snr = c.at("snr");
    ds.config.redundancy_len = c.at("redundancy_len");
    ds.config.subject_variation = c.at("subject_variation");
    ds.config.background_rank = c.at("background_rank");
    ds.config.holdout_classes = c.at("holdout_classes");
    ds.config.patch = c.at("patch");
    ds.config.seed = c.at("seed");
    ds.voxels = need("voxels");
    ds.images = need("images");
    ds.labels = index_vector(need("labels"));
    ds.subjects = index_vector(need("subjects"));
    ds.train = index_vector(need("train"));
    ds.test = index_vector(need("test"));
    const std::size_t n = ck.meta.at("count");
    if (ds.labels.size() != n || ds.voxels.rows() != n || ds.images.rows() != n || ds.subjects.size() != n) {
        throw FormatError("dataset: array lengths disagree with manifest count " + std::to_string(n));
    }
    for (auto l : ds.labels)
        if (l >= ds.config.n_classes) throw FormatError("dataset: label exceeds manifest class count");
    return ds;
}

double ridge_probe_accuracy(const Tensor& train_x, const std::vector<std::size_t>& train_y, const Tensor& test_x,
                            const std::vector<std::size_t>& test_y, std::size_t n_classes, double lambda) {
    using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto n = static_cast<Eigen::Index>(train_x.rows()), d = static_cast<Eigen::Index>(train_x.cols());
    Eigen::Map<const Mat> x(train_x.data(), n, d);
    Eigen::Map<const Mat> xt(test_x.data(), static_cast<Eigen::Index>(test_x.rows()), d);
    Eigen::RowVectorXd mu = x.colwise().mean();
    Mat xc = x.rowwise() - mu;
    Mat y = Mat::Constant(n, static_cast<Eigen::Index>(n_classes), -1.0 / static_cast<double>(n_classes));
    for (Eigen::Index i = 0; i < n; ++i) y(i, static_cast<Eigen::Index>(train_y[i])) += 1.0;
    Mat w;
    if (d <= n) {
        Mat gram = xc.transpose() * xc;
        gram.diagonal().array() += lambda;
        w = gram.llt().solve(xc.transpose() * y);
    } else {
        Mat gram = xc * xc.transpose();
        gram.diagonal().array() += lambda;
        w = xc.transpose() * gram.llt().solve(y);
    }
    Mat scores = (xt.rowwise() - mu) * w;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best;
        scores.row(i).maxCoeff(&best);
        correct += static_cast<std::size_t>(best) == test_y[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    return test_y.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_y.size());
}

double ridge_probe_accuracy(const PairedDataset& ds, const std::vector<std::size_t>& train,
                            const std::vector<std::size_t>& test, double lambda) {
    auto rows = [&](const std::vector<std::size_t>& idx, Tensor& x, std::vector<std::size_t>& y) {
        const std::size_t nv = ds.n_voxels();
        x = Tensor({idx.size(), nv});
        for (std::size_t k = 0; k < idx.size(); ++k) {
            std::copy_n(ds.voxels.data() + idx[k] * nv, nv, x.data() + k * nv);
            y.push_back(ds.labels[idx[k]]);
        }
    };
    Tensor xa, xb;
    std::vector<std::size_t> ya, yb;
    rows(train, xa, ya);
    rows(test, xb, yb);
    return ridge_probe_accuracy(xa, ya, xb, yb, ds.config.n_classes, lambda);
}

double pearson(const double* a, const double* b, std::size_t n) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb + 1e-300);
}

}  // namespace neurodec
