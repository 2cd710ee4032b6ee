// Copyright 2026 The FedLeak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fedleak/error.hpp"

namespace fedleak::data {
namespace {

using nlohmann::json;

// Soft indicator of the unit ellipse: ~1 inside, ~0 outside.
double SoftEllipse(double u, double v, double cu, double cv, double ru, double rv,
                   double sharpness) {
  const double du = (u - cu) / ru;
  const double dv = (v - cv) / rv;
  const double r = std::sqrt(du * du + dv * dv);
  return 1.0 / (1.0 + std::exp(-sharpness * (1.0 - r)));
}

LabeledImage SynthesizeOne(std::size_t side, int label, RngStream& rng) {
  LabeledImage out;
  out.label = label;
  Attributes attrs;
  attrs.binary = rng.Bernoulli(0.5) ? 1 : 0;
  attrs.scalar = static_cast<float>(rng.Uniform());
  out.attributes = attrs;

  const double torso_w = attrs.binary ? 0.62 : 0.82;
  const double lung_w = attrs.binary ? 0.2 : 0.28;
  const double cx = rng.Uniform(-0.08, 0.08);
  const double cy = rng.Uniform(-0.08, 0.08);
  const double scale = rng.Uniform(0.95, 1.05);
  const double contrast = 0.6 + 0.8 * attrs.scalar;
  const double lung_sep = 0.42 * torso_w / 0.82;

  // Lesion inside one lung field.
  const double side_sign = rng.Bernoulli(0.5) ? 1.0 : -1.0;
  const double lu = cx + side_sign * lung_sep * scale + rng.Uniform(-0.08, 0.08);
  const double lv = cy + rng.Uniform(-0.3, 0.25);
  const double lr = rng.Uniform(0.16, 0.24);

  Tensor img({side, side});
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (2.0 * (x + 0.5) / side - 1.0);
      const double v = (2.0 * (y + 0.5) / side - 1.0);
      double p = 0.12;
      p += 0.45 * SoftEllipse(u, v, cx, cy + 0.15, torso_w * scale, 1.1 * scale, 6.0);
      const double lungs = SoftEllipse(u, v, cx - lung_sep * scale, cy - 0.05, lung_w * scale,
                                       0.5 * scale, 6.0) +
                           SoftEllipse(u, v, cx + lung_sep * scale, cy - 0.05, lung_w * scale,
                                       0.5 * scale, 6.0);
      p -= 0.3 * std::min(lungs, 1.0);
      p += 0.18 * SoftEllipse(u, v, cx, cy + 0.1, 0.07, 1.2, 4.0);  // spine
      p += 0.05 * v;                                                 // vertical shading
      if (label == 1) p += 0.45 * SoftEllipse(u, v, lu, lv, lr, lr, 5.0);
      p = 0.4 + contrast * (p - 0.4);
      p += 0.03 * rng.Normal();
      img.vec()[y * side + x] = static_cast<float>(std::clamp(p, 0.0, 1.0));
    }
  }
  out.image = std::move(img);
  return out;
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

// Reads the next whitespace-delimited header token, skipping comments.
std::string PgmToken(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

std::size_t ParseHeaderNumber(const std::string& tok, const std::filesystem::path& path) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), ::isdigit)) {
    throw IoError("malformed PGM header in " + path.string());
  }
  return std::stoul(tok);
}

}  // namespace

Dataset GenerateSynthetic(std::size_t n, std::size_t side, double class_balance, RngStream& rng) {
  if (n == 0 || side < 4) throw InvalidArgument("generate_synthetic: invalid dimensions");
  if (!(class_balance > 0.0 && class_balance < 1.0)) {
    throw InvalidArgument("generate_synthetic: class balance must be in (0,1)");
  }
  Dataset out;
  out.reserve(n);
  RngStream labels = rng.Derive("labels");
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels.Bernoulli(class_balance) ? 1 : 0;
    RngStream img_rng = rng.Derive("image" + std::to_string(i));
    out.push_back(SynthesizeOne(side, label, img_rng));
  }
  return out;
}

SplitSizes SplitSizesFor(std::size_t n) {
  if (n >= 50) {
    const std::size_t train = n * 7 / 10;
    const std::size_t val = n * 15 / 100;
    return {train, val, n - train - val};
  }
  if (n >= 10) {
    const std::size_t third = n / 3;
    return {n - 2 * third, third, third};
  }
  return {n, 0, 0};
}

ClientSplit SplitClient(std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("split_client: no images");
  const SplitSizes s = SplitSizesFor(indices.size());
  ClientSplit out;
  out.train.assign(indices.begin(), indices.begin() + s.train);
  out.val.assign(indices.begin() + s.train, indices.begin() + s.train + s.val);
  out.test.assign(indices.begin() + s.train + s.val, indices.end());
  return out;
}

ClientSchedule LargeSourceSchedule(std::size_t images_per_client) {
  return {{5, images_per_client, "A_large"}};
}

ClientSchedule SmallSourceSchedule() {
  return {{2, 500, "B_small_1"}, {2, 200, "B_small_1"}, {2, 100, "B_small_1"},
          {2, 30, "B_small_1"},  {2, 10, "B_small_1"},  {2, 2, "B_small_1"},
          {2, 1, "B_small_1"}};
}

ClientSchedule TinySourceSchedule() {
  return {{2, 30, "B_small_2"}, {5, 10, "B_small_2"}, {5, 2, "B_small_2"}, {5, 1, "B_small_2"}};
}

ClientSchedule DefaultSchedule() {
  ClientSchedule s = LargeSourceSchedule();
  for (const auto& e : SmallSourceSchedule()) s.push_back(e);
  for (const auto& e : TinySourceSchedule()) s.push_back(e);
  return s;
}

std::size_t ScheduleClients(const ClientSchedule& schedule) {
  std::size_t n = 0;
  for (const auto& e : schedule) n += e.count;
  return n;
}

std::size_t ScheduleImages(const ClientSchedule& schedule) {
  std::size_t n = 0;
  for (const auto& e : schedule) n += e.count * e.images;
  return n;
}

std::vector<ClientPartition> Partition(std::size_t dataset_size, const ClientSchedule& schedule,
                                       RngStream& rng) {
  for (const auto& e : schedule) {
    if (e.count == 0 || e.images == 0) {
      throw InvalidArgument("partition: schedule counts must be positive");
    }
  }
  const std::size_t needed = ScheduleImages(schedule);
  if (needed > dataset_size) {
    throw InvalidArgument("partition: schedule needs " + std::to_string(needed) +
                          " images, dataset has " + std::to_string(dataset_size));
  }
  const auto order = rng.Permutation(dataset_size);
  std::vector<ClientPartition> out;
  std::size_t next = 0;
  for (const auto& e : schedule) {
    for (std::size_t c = 0; c < e.count; ++c) {
      ClientPartition p;
      p.id = out.size();
      p.source = e.source;
      p.split = SplitClient(std::span(order).subspan(next, e.images));
      next += e.images;
      out.push_back(std::move(p));
    }
  }
  return out;
}

json PartitionToJson(const std::vector<ClientPartition>& clients, std::size_t dataset_size) {
  json list = json::array();
  for (const auto& c : clients) {
    list.push_back({{"id", c.id},
                    {"source", c.source},
                    {"n", c.size()},
                    {"train", c.split.train},
                    {"val", c.split.val},
                    {"test", c.split.test}});
  }
  return {{"dataset_size", dataset_size}, {"clients", list}};
}

std::vector<ClientPartition> PartitionFromJson(const json& j) {
  try {
    std::vector<ClientPartition> out;
    for (const auto& c : j.at("clients")) {
      ClientPartition p;
      p.id = c.at("id").get<std::size_t>();
      p.source = c.at("source").get<std::string>();
      p.split.train = c.at("train").get<std::vector<std::size_t>>();
      p.split.val = c.at("val").get<std::vector<std::size_t>>();
      p.split.test = c.at("test").get<std::vector<std::size_t>>();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw IoError("malformed partition manifest: " + std::string(e.what()));
  }
}

Batch Gather(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("gather: empty index set");
  const std::size_t side = data.at(indices[0]).image.dim(0);
  const std::size_t px = side * side;
  Batch b{Tensor({indices.size(), 1, side, side}), Tensor({indices.size()})};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const LabeledImage& img = data.at(indices[i]);
    if (img.image.size() != px) throw ShapeError("gather: images of different sizes");
    std::copy(img.image.data().begin(), img.image.data().end(), b.pixels.vec().begin() + i * px);
    b.labels[i] = static_cast<float>(img.label);
  }
  return b;
}

// ---- PGM ----------------------------------------------------------------------

void WritePgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw ShapeError("write_pgm: expected a rank-2 image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Tensor ReadPgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (PgmToken(in) != "P5") throw IoError("not a binary PGM (P5): " + path.string());
  const std::size_t width = ParseHeaderNumber(PgmToken(in), path);
  const std::size_t height = ParseHeaderNumber(PgmToken(in), path);
  const std::size_t maxval = ParseHeaderNumber(PgmToken(in), path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
    throw IoError("unsupported PGM dimensions or depth in " + path.string());
  }
  std::vector<unsigned char> bytes(width * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw IoError("truncated PGM payload in " + path.string());
  }
  Tensor t({height, width});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    t[i] = static_cast<float>(bytes[i]) / static_cast<float>(maxval);
  }
  return t;
}

void ExportGrayscaleDir(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw IoError("cannot write labels.csv in " + dir.string());
  const bool with_attrs =
      std::all_of(data.begin(), data.end(), [](const auto& d) { return d.attributes.has_value(); });
  csv << "filename,label" << (with_attrs ? ",attr_binary,attr_scalar" : "") << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.pgm", i);
    WritePgm(dir / name, data[i].image);
    csv << name << ',' << data[i].label;
    if (with_attrs) {
      char scalar[32];
      std::snprintf(scalar, sizeof(scalar), "%.9g", data[i].attributes->scalar);
      csv << ',' << data[i].attributes->binary << ',' << scalar;
    }
    csv << '\n';
  }
}

Dataset ImportGrayscaleDir(const std::filesystem::path& dir,
                           const std::filesystem::path& labels_csv) {
  std::ifstream csv(labels_csv);
  if (!csv) throw IoError("cannot open labels CSV " + labels_csv.string());
  std::string line;
  if (!std::getline(csv, line)) throw IoError("empty labels CSV");
  const auto header = SplitCsvLine(line);
  if (header.size() < 2 || header[0] != "filename" || header[1] != "label") {
    throw IoError("labels CSV must start with filename,label");
  }
  const bool has_attr_cols = header.size() >= 4;
  Dataset out;
  std::size_t side = 0;
  while (std::getline(csv, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = SplitCsvLine(line);
    if (cells.size() < 2) throw IoError("short labels CSV row: " + line);
    const auto path = dir / cells[0];
    if (!std::filesystem::exists(path)) throw IoError("unknown image file in CSV: " + cells[0]);
    LabeledImage img;
    img.image = ReadPgm(path);
    if (img.image.dim(0) != img.image.dim(1)) throw ShapeError("image is not square: " + cells[0]);
    if (side == 0) side = img.image.dim(0);
    if (img.image.dim(0) != side) throw ShapeError("image size mismatch: " + cells[0]);
    if (cells[1] != "0" && cells[1] != "1") throw IoError("label must be 0 or 1: " + line);
    img.label = cells[1] == "1";
    if (has_attr_cols && cells.size() >= 4 && !cells[2].empty() && !cells[3].empty()) {
      try {
        img.attributes = Attributes{std::stoi(cells[2]), std::stof(cells[3])};
      } catch (const std::exception&) {
        throw IoError("bad attribute values in row: " + line);
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace fedleak::data
