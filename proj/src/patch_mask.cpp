#include "neurodec/patch_mask.hpp"

#include <algorithm>
#include <cmath>

#include "neurodec/errors.hpp"

namespace neurodec {

std::size_t mask_count(double ratio, std::size_t total) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total) + 0.5));
}

MaskedSequence random_mask(const Var& tokens, double ratio, Rng& rng) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ContractError("random_mask: ratio must be in [0, 1), got " + std::to_string(ratio));
    }
    if (tokens.value().rank() != 2) throw ShapeError("random_mask: tokens must be a matrix");
    const std::size_t total = tokens.value().rows();
    MaskedSequence out;
    out.total_patches = total;
    out.mask_ratio = ratio;
    out.mask_indices = rng.choose(total, mask_count(ratio, total));
    std::sort(out.mask_indices.begin(), out.mask_indices.end());
    std::vector<bool> masked(total, false);
    for (auto i : out.mask_indices) masked[i] = true;
    for (std::size_t i = 0; i < total; ++i)
        if (!masked[i]) out.visible_indices.push_back(i);
    out.visible_tokens = out.mask_indices.empty() ? tokens : gather_rows(tokens, out.visible_indices);
    return out;
}

Tensor random_sparsify(const Tensor& voxels, double fraction, Rng& rng) {
    if (!(fraction >= 0.0 && fraction < 1.0)) {
        throw ContractError("random_sparsify: fraction must be in [0, 1), got " + std::to_string(fraction));
    }
    Tensor out = voxels;
    for (auto i : rng.choose(voxels.numel(), mask_count(fraction, voxels.numel()))) out[i] = 0.0;
    return out;
}

Var fill_masked(const MaskedSequence& masked, const Var& visible, const Var& fill) {
    if (visible.value().rows() != masked.visible_indices.size()) {
        throw ShapeError("fill_masked: " + std::to_string(visible.value().rows()) + " visible rows for " +
                         std::to_string(masked.visible_indices.size()) + " visible positions");
    }
    if (masked.mask_indices.empty()) return visible;
    if (fill.numel() != visible.value().cols()) throw ShapeError("fill_masked: fill width mismatch");
    // Stack [visible; fill...] then permute rows into original order.
    const std::size_t nv = masked.visible_indices.size();
    std::vector<std::size_t> order(masked.total_patches);
    for (std::size_t i = 0; i < nv; ++i) order[masked.visible_indices[i]] = i;
    for (std::size_t i = 0; i < masked.mask_indices.size(); ++i) order[masked.mask_indices[i]] = nv + i;
    const Var parts[] = {visible, broadcast_row(fill, masked.mask_indices.size())};
    return gather_rows(concat_rows(parts), order);
}

Var reassemble(const MaskedSequence& masked, const Var& decoded_patches) {
    if (decoded_patches.value().rank() != 2 || decoded_patches.value().rows() != masked.total_patches) {
        throw ShapeError("reassemble: expected " + std::to_string(masked.total_patches) + " decoded patches, got " +
                         shape_str(decoded_patches.shape()));
    }
    return reshape(decoded_patches, {1, decoded_patches.numel()});
}

namespace {

// index[patch-row element] -> raster element
std::vector<std::size_t> image_patch_index(std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ContractError("patchify_image: " + std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch " + std::to_string(p));
    }
    const std::size_t gw = w / p;
    const std::size_t n = (h / p) * gw;
    std::vector<std::size_t> idx(h * w * c);
    std::size_t k = 0;
    for (std::size_t patch = 0; patch < n; ++patch) {
        const std::size_t y0 = (patch / gw) * p, x0 = (patch % gw) * p;
        for (std::size_t py = 0; py < p; ++py)
            for (std::size_t px = 0; px < p; ++px)
                for (std::size_t ch = 0; ch < c; ++ch) idx[k++] = ((y0 + py) * w + (x0 + px)) * c + ch;
    }
    return idx;
}

}  // namespace

Tensor patchify_image(const Tensor& image, std::size_t h, std::size_t w, std::size_t p) {
    if (image.rank() != 2 || image.rows() != h * w) throw ShapeError("patchify_image: raster shape mismatch");
    const std::size_t c = image.cols();
    const auto idx = image_patch_index(h, w, c, p);
    Tensor out({(h / p) * (w / p), p * p * c});
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = image[idx[i]];
    return out;
}

Var unpatchify_image(const Var& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p) {
    const auto fwd = image_patch_index(h, w, c, p);
    if (patches.numel() != fwd.size()) throw ShapeError("unpatchify_image: patch matrix size mismatch");
    std::vector<std::size_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
    return gather_elements(patches, inv, {h * w, c});
}

}  // namespace neurodec
