#pragma once

// Patch-level random masking, mask-token reassembly and the random
// sparsification augmentation.

#include <cstddef>
#include <vector>

#include "neurodec/autograd.hpp"
#include "neurodec/rng.hpp"

namespace neurodec {

struct MaskedSequence {
    Var visible_tokens;                        // visible rows, ascending position order
    std::vector<std::size_t> mask_indices;     // sorted
    std::vector<std::size_t> visible_indices;  // sorted complement
    std::size_t total_patches = 0;
    double mask_ratio = 0.0;
};

// round(ratio * total), halves rounded up.
std::size_t mask_count(double ratio, std::size_t total);

// Draws exactly mask_count(ratio, P) masked positions uniformly at random.
MaskedSequence random_mask(const Var& tokens, double ratio, Rng& rng);

// Zeroes exactly mask_count(fraction, n) uniformly chosen voxels; the rest
// are copied unchanged.
Tensor random_sparsify(const Tensor& voxels, double fraction, Rng& rng);

// Full-length sequence: `visible` rows (one per visible index) at their
// original positions, `fill` (1 x width) at every masked position.
Var fill_masked(const MaskedSequence& masked, const Var& visible, const Var& fill);

// Decoded patch rows (one per patch, original order) back to a flat
// (1 x total_patches*patch) prediction.
Var reassemble(const MaskedSequence& masked, const Var& decoded_patches);

// Image raster (h*w x c, channels-last) to non-overlapping p x p patches,
// row-major over the patch grid; each patch row is (py, px, channel) ordered.
Tensor patchify_image(const Tensor& image, std::size_t h, std::size_t w, std::size_t p);
// Inverse of patchify_image, differentiable.
Var unpatchify_image(const Var& patches, std::size_t h, std::size_t w, std::size_t c, std::size_t p);

}  // namespace neurodec
