#include "dfpg/data/dataset.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dfpg/numerics/tensor_io.hpp"

namespace dfpg::data {

namespace fs = std::filesystem;

Dataset strip_truth(const std::vector<OrdinalSample>& samples) {
  Dataset out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.id, s.image, s.label});
  return out;
}

std::vector<int> labels_of(const Dataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(s.label);
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.at(i));
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

Tensor resize_bilinear(const Tensor& src, std::size_t side) {
  const std::size_t ch = src.dim(0), h = src.dim(1), w = src.dim(2);
  if (h == side && w == side) return src;
  Tensor out({ch, side, side});
  const double sy = double(h) / side, sx = double(w) / side;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t y = 0; y < side; ++y) {
      const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(h - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (std::size_t x = 0; x < side; ++x) {
        const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(w - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        const double top = src.at(c, y0, x0) * (1 - tx) + src.at(c, y0, x1) * tx;
        const double bot = src.at(c, y1, x0) * (1 - tx) + src.at(c, y1, x1) * tx;
        out.at(c, y, x) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

}  // namespace

Tensor read_png(const fs::path& path, std::size_t side, std::size_t channels) {
  if (channels != 1 && channels != 3) throw DataError("read_png: channels must be 1 or 3");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError(path.string() + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError(path.string() + ": " + msg);
  }
  const std::size_t h = img.height, w = img.width;
  Tensor raw({channels, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        raw.at(c, y, x) = buf[(y * w + x) * channels + c] / 255.0f;
  return resize_bilinear(raw, side);
}

void write_png_gray(const fs::path& path, const Tensor& image) {
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<unsigned char> buf(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    buf[i] = static_cast<unsigned char>(std::clamp(image[i], 0.0f, 1.0f) * 255.0f + 0.5f);
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError(path.string() + ": " + img.message);
  }
}

Dataset load_folder(const fs::path& dir, const fs::path& labels_csv, const FolderOptions& options) {
  std::ifstream in(labels_csv);
  if (!in) throw DataError("cannot open labels file " + labels_csv.string());
  std::string line;
  std::size_t line_no = 0;
  struct Row {
    std::string filename;
    int label;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (line_no == 1 && cells.size() == 2 && cells[0] == "filename" && cells[1] == "label") continue;
    if (cells.size() != 2 || cells[0].empty()) {
      throw DataError(labels_csv.string() + ":" + std::to_string(line_no) +
                      ": expected 'filename,label'");
    }
    int label = 0;
    const auto& lab = cells[1];
    const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), label);
    if (ec != std::errc{} || ptr != lab.data() + lab.size()) {
      throw DataError(labels_csv.string() + ":" + std::to_string(line_no) + ": malformed label '" +
                      lab + "'");
    }
    if (label < 1 || label > options.classes) {
      throw DataError(labels_csv.string() + ":" + std::to_string(line_no) + ": label " +
                      std::to_string(label) + " outside 1.." + std::to_string(options.classes));
    }
    rows.push_back({cells[0], label});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.filename < b.filename; });

  Dataset out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    const fs::path file = dir / row.filename;
    if (!fs::exists(file)) throw DataError("missing image file " + file.string());
    Tensor image;
    if (file.extension() == ".dfpt") {
      image = load_tensor(file);
      require_shape(image.shape(), {options.channels, options.image_side, options.image_side},
                    file.string());
    } else {
      image = read_png(file, options.image_side, options.channels);
    }
    out.push_back({fs::path(row.filename).stem().string(), std::move(image), row.label});
  }
  return out;
}

void save_synthetic(const fs::path& dir, const std::vector<OrdinalSample>& samples) {
  fs::create_directories(dir / "images");
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  std::ofstream truth(dir / "patch_truth.csv", std::ios::trunc);
  if (!labels || !truth) throw DataError("cannot write dataset CSVs under " + dir.string());
  labels << "filename,label\n";
  truth << "filename";
  const std::size_t k = samples.empty() ? 0 : samples.front().patch_truth.size();
  for (std::size_t p = 0; p < k; ++p) truth << ",p" << p;
  truth << '\n';
  for (const auto& s : samples) {
    const std::string rel = "images/" + s.id + ".dfpt";
    save_tensor(dir / rel, s.image);
    labels << rel << ',' << s.label << '\n';
    truth << rel;
    for (int v : s.patch_truth) truth << ',' << v;
    truth << '\n';
  }
}

std::vector<std::pair<std::string, std::vector<int>>> load_patch_truth(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<std::string, std::vector<int>>> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    std::vector<int> truth;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      int v = 0;
      const auto [ptr, ec] = std::from_chars(cells[i].data(), cells[i].data() + cells[i].size(), v);
      if (ec != std::errc{}) throw DataError(csv.string() + ":" + std::to_string(line_no) + ": bad entry");
      truth.push_back(v);
    }
    out.emplace_back(fs::path(cells[0]).stem().string(), std::move(truth));
  }
  return out;
}

}  // namespace dfpg::data
