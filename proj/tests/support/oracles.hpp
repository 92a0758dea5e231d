#pragma once

#include <functional>
#include <vector>

#include "skdt/array.hpp"
#include "skdt/autodiff.hpp"
#include "skdt/model.hpp"

namespace skdt::testing {

using MultiFn = std::function<Var(const std::vector<Var>&)>;

/// Largest relative error between reverse-mode gradients and central finite
/// differences (step h) of the scalar <w, f(inputs)> over every input entry.
/// Error per input is max|analytic - numeric| / max(max|numeric|, 1e-6).
double fd_gradient_error(const MultiFn& f, const std::vector<Array>& inputs, std::uint64_t seed, double h = 1e-5);

/// |<u, J v> - <J^T u, v>| / max(1, |<u, J v>|) for random u, v.
double adjoint_gap(const GraphFn& f, const Array& x, std::uint64_t seed);

/// Straight-line re-evaluation of the model forward pass with plain loops
/// over the parameter arrays. Shares no code with the graph ops.
Array scripted_forward(const model::SkipDiT& m, const Array& image, int t, int label);

/// Plain-loop DiT block (tokens, d) given the conditioning vector (d).
std::vector<double> scripted_block(const model::SkipDiT& m, int l, const std::vector<double>& x, std::size_t n,
                                   const std::vector<double>& cond);

/// Plain-loop fusion branch.
std::vector<double> scripted_fuse(const model::SkipDiT& m, int i, const std::vector<double>& shallow,
                                  const std::vector<double>& deep, std::size_t n);

}  // namespace skdt::testing
