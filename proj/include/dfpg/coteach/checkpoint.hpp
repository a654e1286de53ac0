#pragma once

#include <filesystem>

#include "dfpg/annotator/annotator.hpp"
#include "dfpg/coteach/model.hpp"

namespace dfpg::coteach {

/*
 * A checkpoint is two files: `path` holds the parameter tensors as back-to-back
 * DFPT records in visit order, `path`.json names them and records the
 * architecture needed to rebuild the model.
 */
void save_model(const std::filesystem::path& path, const DfpgModel<float>& model);
DfpgModel<float> load_model(const std::filesystem::path& path, backbone::EncoderDims* dims = nullptr);

void save_annotator(const std::filesystem::path& path, const annotator::AnnotatorModel<float>& model);
annotator::AnnotatorModel<float> load_annotator(const std::filesystem::path& path,
                                                backbone::EncoderDims* dims = nullptr);

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

}  // namespace dfpg::coteach
