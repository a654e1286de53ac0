#include "dfpg/coteach/checkpoint.hpp"

#include <fstream>

#include "dfpg/numerics/tensor_io.hpp"
#include "json.hpp"

namespace dfpg::coteach {

using nlohmann::ordered_json;

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

namespace {

ordered_json dims_json(const backbone::EncoderDims& d) {
  return {{"channels", d.channels}, {"image_side", d.image_side}, {"patch_size", d.patch_size},
          {"embed_dim", d.embed_dim}};
}

backbone::EncoderDims dims_from(const ordered_json& j) {
  backbone::EncoderDims d;
  d.channels = j.at("channels").get<std::size_t>();
  d.image_side = j.at("image_side").get<std::size_t>();
  d.patch_size = j.at("patch_size").get<std::size_t>();
  d.embed_dim = j.at("embed_dim").get<std::size_t>();
  d.validate();
  return d;
}

template <class Model>
void write_checkpoint(const std::filesystem::path& path, const Model& model, ordered_json manifest) {
  std::vector<Tensor> tensors;
  ordered_json names = ordered_json::array();
  model.visit([&](const std::string& name, const Tensor& t) {
    tensors.push_back(t);
    names.push_back({{"name", name}, {"shape", t.shape()}});
  });
  manifest["tensors"] = names;
  save_tensors(path, tensors);
  std::ofstream os(manifest_path(path), std::ios::trunc);
  if (!os) throw DataError("cannot write " + manifest_path(path).string());
  os << manifest.dump(2) << '\n';
}

ordered_json read_manifest(const std::filesystem::path& path, const std::string& format) {
  std::ifstream is(manifest_path(path));
  if (!is) throw DataError("missing checkpoint manifest " + manifest_path(path).string());
  ordered_json j;
  try {
    j = ordered_json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path(path).string() + ": " + e.what());
  }
  if (j.value("format", "") != format) {
    throw DataError(path.string() + ": expected a " + format + " checkpoint");
  }
  return j;
}

template <class Model>
void fill_params(const std::filesystem::path& path, const ordered_json& manifest, Model& model) {
  const auto tensors = load_tensors(path);
  const auto& names = manifest.at("tensors");
  if (names.size() != tensors.size()) throw DataError(path.string() + ": tensor count differs from manifest");
  std::size_t i = 0;
  model.visit([&](const std::string& name, Tensor& t) {
    if (i >= tensors.size()) throw DataError(path.string() + ": too few tensors");
    if (names[i].at("name").get<std::string>() != name) {
      throw DataError(path.string() + ": expected tensor " + name + " at position " + std::to_string(i));
    }
    if (tensors[i].shape() != t.shape()) {
      throw ShapeError(path.string() + ": tensor " + name + " has shape " + shape_str(tensors[i].shape()) +
                       ", architecture wants " + shape_str(t.shape()));
    }
    t = tensors[i++];
  });
  if (i != tensors.size()) throw DataError(path.string() + ": extra tensors beyond the architecture");
}

}  // namespace

void save_model(const std::filesystem::path& path, const DfpgModel<float>& model) {
  ordered_json m;
  m["format"] = "dfpg-model";
  m["kind"] = to_string(model.kind);
  m["classes"] = model.classes;
  m["encoder"] = dims_json(model.encoder.dims);
  if (model.kind == ModelKind::dfl) {
    const auto& c = model.dfl.config;
    m["fuzzy"] = {{"rules_patch", c.rules_patch},
                  {"rules_channel", c.rules_channel},
                  {"fusion", fuzzy::to_string(c.fusion)},
                  {"f1_representation", fuzzy::to_string(c.f1_representation)},
                  {"f2_representation", fuzzy::to_string(c.f2_representation)}};
  }
  write_checkpoint(path, model, m);
}

DfpgModel<float> load_model(const std::filesystem::path& path, backbone::EncoderDims* dims_out) {
  const auto m = read_manifest(path, "dfpg-model");
  ModelSpec spec;
  try {
    spec.kind = parse_model_kind(m.at("kind").get<std::string>());
    spec.classes = m.at("classes").get<int>();
    spec.dims = dims_from(m.at("encoder"));
    if (spec.kind == ModelKind::dfl) {
      const auto& f = m.at("fuzzy");
      spec.dfl.rules_patch = f.at("rules_patch").get<std::size_t>();
      spec.dfl.rules_channel = f.at("rules_channel").get<std::size_t>();
      spec.dfl.fusion = fuzzy::parse_fusion(f.at("fusion").get<std::string>());
      spec.dfl.f1_representation = fuzzy::parse_representation(f.at("f1_representation").get<std::string>());
      spec.dfl.f2_representation = fuzzy::parse_representation(f.at("f2_representation").get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path(path).string() + ": " + e.what());
  }
  auto model = init_model(spec, {}, RngStream(0));
  fill_params(path, m, model);
  if (dims_out) *dims_out = spec.dims;
  return model;
}

void save_annotator(const std::filesystem::path& path, const annotator::AnnotatorModel<float>& model) {
  ordered_json m;
  m["format"] = "dfpg-annotator";
  m["classes"] = model.classes;
  m["encoder"] = dims_json(model.encoder.dims);
  write_checkpoint(path, model, m);
}

annotator::AnnotatorModel<float> load_annotator(const std::filesystem::path& path,
                                                backbone::EncoderDims* dims_out) {
  const auto m = read_manifest(path, "dfpg-annotator");
  backbone::EncoderDims dims;
  int classes = 0;
  try {
    dims = dims_from(m.at("encoder"));
    classes = m.at("classes").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path(path).string() + ": " + e.what());
  }
  auto model = annotator::init_annotator(dims, classes, RngStream(0));
  fill_params(path, m, model);
  if (dims_out) *dims_out = dims;
  return model;
}

}  // namespace dfpg::coteach
