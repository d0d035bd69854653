#pragma once

#include <string>
#include <vector>

#include "cyclegc/image.hpp"
#include "cyclegc/phantom.hpp"

namespace cyclegc {

/// Linear map [lo, hi] -> [0, 255]; out-of-range values clamp to the
/// endpoints. Throws InvalidDataError on NaN/Inf pixels.
ImageGrid normalize_range(const std::vector<double>& raw, int h, int w, double lo, double hi,
                          Modality modality);

/// CT window per the method: [-150, 350] HU -> [0, 255].
ImageGrid normalize_ct(const std::vector<double>& raw, int h, int w);

/// MR window: [0, 100] -> [0, 255].
ImageGrid normalize_mr(const std::vector<double>& raw, int h, int w);

/// Inverse of normalize_range using the grid's declared intensity_range.
std::vector<double> denormalize(const ImageGrid& g);

/// Affine bridge between the external [0, 255] range and the internal
/// [-1, 1] range the generators operate in.
inline double to_internal(double v255) { return v255 / 127.5 - 1.0; }
inline double to_external(double v11) { return (v11 + 1.0) * 127.5; }

// ---- PNG primitives -------------------------------------------------------

/// 16-bit grayscale PNG. Values are taken in [0, 255] and quantized to the
/// full 16-bit range.
void write_png16(const std::string& path, const ImageGrid& g);
ImageGrid read_png16(const std::string& path, Modality modality);

/// 8-bit indexed (palette) PNG of class ids.
void write_png_labels(const std::string& path, const LabelGrid& g);
LabelGrid read_png_labels(const std::string& path, const std::vector<std::string>& class_names);

/// Optional validity mask as 8-bit grayscale 0/255.
void write_png_mask(const std::string& path, const std::vector<std::uint8_t>& mask, int h, int w);
std::vector<std::uint8_t> read_png_mask(const std::string& path, int& h, int& w);

// ---- Dataset layout -------------------------------------------------------
//
// dir/ct_####.png, dir/mr_####.png, dir/lbl_####.png (+ msk_####.png when a
// sample carries a mask) and one meta.json listing per-sample subject_id,
// seed, pose and the class names.

void save_dataset(const std::string& dir, const std::vector<PhantomSample>& samples,
                  const std::vector<std::uint64_t>& seeds = {});
std::vector<PhantomSample> load_dataset(const std::string& dir);

/// Loads only one modality's slices from a dataset directory.
/// Throws FormatError on missing meta.json or mismatched dimensions.
std::vector<ImageGrid> load_slices(const std::string& dir, Modality modality);

void save_slices(const std::string& dir, const std::vector<ImageGrid>& slices);

}  // namespace cyclegc
