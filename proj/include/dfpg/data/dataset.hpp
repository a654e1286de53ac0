#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfpg/numerics/tensor.hpp"

namespace dfpg::data {

/// Training-facing sample: no patch ground truth by construction.
struct LabeledImage {
  std::string id;
  Tensor image;  // [Ch, H, W]
  int label = 1; // 1..C
};

using Dataset = std::vector<LabeledImage>;

/// Generator output. patch_truth is evaluation-only.
struct OrdinalSample {
  std::string id;
  Tensor image;
  int label = 1;
  std::vector<int> patch_truth;  // K entries: lesion patches carry `label`, background 1
  int lesion_count = 0;
};

/// Drops patch ground truth for everything that feeds training.
Dataset strip_truth(const std::vector<OrdinalSample>& samples);

std::vector<int> labels_of(const Dataset& data);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

struct FolderOptions {
  std::size_t image_side = 56;
  std::size_t channels = 1;
  int classes = 5;
};

/**
 * Reads `labels_csv` (header `filename,label`, paths relative to `dir`).
 * Images are PNG (resized bilinearly to image_side) or DFPT tensors already
 * at the configured shape. Result is sorted by filename. Throws DataError
 * naming the file or CSV line on any problem.
 */
Dataset load_folder(const std::filesystem::path& dir, const std::filesystem::path& labels_csv,
                    const FolderOptions& options);

/// Writes images/<id>.dfpt, labels.csv and patch_truth.csv under `dir`.
void save_synthetic(const std::filesystem::path& dir, const std::vector<OrdinalSample>& samples);

/// Reads patch_truth.csv written by save_synthetic, keyed in file order.
std::vector<std::pair<std::string, std::vector<int>>> load_patch_truth(
    const std::filesystem::path& csv);

/// Decodes a PNG into [Ch, side, side] floats in [0,1].
Tensor read_png(const std::filesystem::path& path, std::size_t side, std::size_t channels);
void write_png_gray(const std::filesystem::path& path, const Tensor& image);

}  // namespace dfpg::data
