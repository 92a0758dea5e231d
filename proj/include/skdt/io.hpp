#pragma once

#include <fstream>
#include <iosfwd>
#include <string>
#include <vector>

#include "skdt/array.hpp"

namespace skdt::io {

/// Binary P6 grid of (C,H,W) images in row-major tiles, `cols` per row with a
/// one-pixel gap. Values in [lo, hi] map linearly to 0..255 and are clamped;
/// single-channel images are written as gray.
void write_ppm_grid(std::ostream& os, const std::vector<Array>& images, int cols, double lo = -1.0, double hi = 1.0);
void save_ppm_grid(const std::string& path, const std::vector<Array>& images, int cols, double lo = -1.0,
                   double hi = 1.0);

/// CSV with header step,loss; steps are 1-based.
void write_loss_csv(std::ostream& os, const std::vector<double>& losses);

/// Opens `path` for writing or throws std::runtime_error naming it.
std::ofstream open_output(const std::string& path, bool binary = false);

}  // namespace skdt::io
