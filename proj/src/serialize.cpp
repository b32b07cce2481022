// SPDX-License-Identifier: Apache-2.0

#include "duq/serialize.hpp"

#include "duq/rng.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace duq {

namespace {

static_assert(sizeof(double) == 8, "binary formats assume 8-byte IEEE doubles");

constexpr std::uint32_t kFormatVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void append_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void append_f64(std::string& out, const double* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * 8);
}

/// Sequential bounds-checked reads over an in-memory file image.
class ByteReader {
 public:
  ByteReader(std::string bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::string take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw std::invalid_argument("'" + source_ + "': truncated while reading " + what);
    }
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t take_u32(const char* what) {
    const std::string raw = take(4, what);
    std::uint32_t v;
    std::memcpy(&v, raw.data(), 4);
    return v;
  }

  std::uint64_t take_u64(const char* what) {
    const std::string raw = take(8, what);
    std::uint64_t v;
    std::memcpy(&v, raw.data(), 8);
    return v;
  }

  void take_f64(double* dst, std::size_t count, const char* what) {
    if (bytes_.size() - pos_ < count * 8) {
      throw std::invalid_argument("'" + source_ + "': truncated while reading " + what);
    }
    std::memcpy(dst, bytes_.data() + pos_, count * 8);
    pos_ += count * 8;
  }

  bool exhausted() const { return pos_ == bytes_.size(); }
  const std::string& source() const { return source_; }

 private:
  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

ByteReader read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes), path);
}

void append_tensor(std::string& out, const Tensor& tensor) {
  append_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (Index e : tensor.shape()) append_u64(out, static_cast<std::uint64_t>(e));
  append_f64(out, tensor.data(), static_cast<std::size_t>(tensor.size()));
}

Tensor take_tensor(ByteReader& reader) {
  const std::uint32_t rank = reader.take_u32("tensor rank");
  if (rank > 8) {
    throw std::invalid_argument("'" + reader.source() + "': implausible tensor rank " +
                                std::to_string(rank));
  }
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<Index>(reader.take_u64("tensor extent")));
  }
  Tensor tensor(shape);
  reader.take_f64(tensor.data(), static_cast<std::size_t>(tensor.size()), "tensor payload");
  return tensor;
}

nlohmann::json ranges_to_json(const std::vector<FeatureRange>& ranges) {
  nlohmann::json arr = nlohmann::json::array();
  for (const FeatureRange& r : ranges) {
    arr.push_back({{"min", r.min}, {"max", r.max}, {"constant", r.constant}});
  }
  return arr;
}

std::vector<FeatureRange> ranges_from_json(const nlohmann::json& arr) {
  std::vector<FeatureRange> out;
  for (const auto& item : arr) {
    FeatureRange r;
    r.min = item.at("min").get<double>();
    r.max = item.at("max").get<double>();
    r.constant = item.at("constant").get<bool>();
    out.push_back(r);
  }
  return out;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"hidden_sizes", c.hidden_sizes},
          {"embed_dim_station", c.embed_dim_station},
          {"embed_dim_time", c.embed_dim_time},
          {"num_stations", c.num_stations},
          {"n1", c.n1},
          {"n2_nwp", c.n2_nwp},
          {"n3", c.n3},
          {"t_e", c.t_e},
          {"t_d", c.t_d},
          {"min_variance", c.min_variance},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.hidden_sizes = j.at("hidden_sizes").get<std::vector<Index>>();
  c.embed_dim_station = j.at("embed_dim_station").get<Index>();
  c.embed_dim_time = j.at("embed_dim_time").get<Index>();
  c.num_stations = j.at("num_stations").get<Index>();
  c.n1 = j.at("n1").get<Index>();
  c.n2_nwp = j.at("n2_nwp").get<Index>();
  c.n3 = j.at("n3").get<Index>();
  c.t_e = j.at("t_e").get<Index>();
  c.t_d = j.at("t_d").get<Index>();
  c.min_variance = j.at("min_variance").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write_file: cannot open '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw std::runtime_error("atomic_write_file: write to '" + tmp + "' failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw std::runtime_error("atomic_write_file: rename to '" + path + "' failed: " + ec.message());
  }
}

void save_tensor(const Tensor& tensor, const std::string& path) {
  std::string bytes = "DUQT";
  append_u32(bytes, kFormatVersion);
  append_tensor(bytes, tensor);
  atomic_write_file(path, bytes);
}

Tensor load_tensor(const std::string& path) {
  ByteReader reader = read_file(path);
  if (reader.take(4, "magic") != "DUQT") {
    throw std::invalid_argument("'" + path + "' is not a tensor file");
  }
  const std::uint32_t version = reader.take_u32("version");
  if (version != kFormatVersion) {
    throw std::invalid_argument("'" + path + "': unsupported tensor format version " +
                                std::to_string(version));
  }
  Tensor tensor = take_tensor(reader);
  if (!reader.exhausted()) {
    throw std::invalid_argument("'" + path + "': trailing bytes after tensor payload");
  }
  return tensor;
}

void save_dataset(const DatasetTensors& dataset, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  save_tensor(dataset.encoder, (base / "encoder.duqt").string());
  save_tensor(dataset.decoder, (base / "decoder.duqt").string());
  save_tensor(dataset.targets, (base / "targets.duqt").string());
  nlohmann::json meta;
  meta["date_ids"] = dataset.date_ids;
  meta["norm"] = {{"obs", ranges_to_json(dataset.norm.obs)},
                  {"nwp", ranges_to_json(dataset.norm.nwp)},
                  {"targets", ranges_to_json(dataset.norm.targets)}};
  atomic_write_file((base / "meta.json").string(), meta.dump(2) + "\n");
}

DatasetTensors load_dataset(const std::string& dir) {
  const std::filesystem::path base(dir);
  DatasetTensors dataset;
  dataset.encoder = load_tensor((base / "encoder.duqt").string());
  dataset.decoder = load_tensor((base / "decoder.duqt").string());
  dataset.targets = load_tensor((base / "targets.duqt").string());

  const std::string meta_path = (base / "meta.json").string();
  std::ifstream in(meta_path);
  if (!in) throw std::invalid_argument("cannot open '" + meta_path + "'");
  nlohmann::json meta;
  try {
    in >> meta;
    dataset.date_ids = meta.at("date_ids").get<std::vector<Index>>();
    dataset.norm.obs = ranges_from_json(meta.at("norm").at("obs"));
    dataset.norm.nwp = ranges_from_json(meta.at("norm").at("nwp"));
    dataset.norm.targets = ranges_from_json(meta.at("norm").at("targets"));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("'" + meta_path + "': " + e.what());
  }

  if (dataset.encoder.rank() != 4 || dataset.decoder.rank() != 4 || dataset.targets.rank() != 4) {
    throw std::invalid_argument("'" + dir + "': dataset tensors must be rank 4");
  }
  if (static_cast<Index>(dataset.date_ids.size()) != dataset.encoder.extent(0)) {
    throw std::invalid_argument("'" + dir + "': date labels do not match tensor extent");
  }
  return dataset;
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  nlohmann::json header;
  header["config"] = config_to_json(params.config);
  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  for (const Parameter* p : ordered_params(params)) {
    list.push_back({{"name", p->name}, {"shape", p->value.shape()}});
    append_f64(payload, p->value.data(), static_cast<std::size_t>(p->value.size()));
  }
  header["params"] = list;
  const std::string header_text = header.dump();

  std::string bytes = "DUQP";
  append_u32(bytes, kFormatVersion);
  append_u64(bytes, header_text.size());
  bytes += header_text;
  bytes += payload;
  atomic_write_file(path, bytes);
}

ModelParams load_checkpoint(const std::string& path) {
  ByteReader reader = read_file(path);
  if (reader.take(4, "magic") != "DUQP") {
    throw std::invalid_argument("'" + path + "' is not a checkpoint file");
  }
  const std::uint32_t version = reader.take_u32("version");
  if (version != kFormatVersion) {
    throw std::invalid_argument("'" + path + "': unsupported checkpoint format version " +
                                std::to_string(version));
  }
  const std::uint64_t header_len = reader.take_u64("header length");
  const std::string header_text = reader.take(header_len, "header");
  nlohmann::json header;
  ModelConfig config;
  try {
    header = nlohmann::json::parse(header_text);
    config = config_from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("'" + path + "': " + e.what());
  }
  validate(config);

  Rng rng(config.seed);
  ModelParams params = init_params(config, rng);
  std::vector<Parameter*> ordered = ordered_params(params);
  const nlohmann::json& list = header.at("params");
  if (list.size() != ordered.size()) {
    throw std::invalid_argument("'" + path + "': checkpoint lists " + std::to_string(list.size()) +
                                " parameters, model has " + std::to_string(ordered.size()));
  }
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const std::string name = list[i].at("name").get<std::string>();
    const Shape shape = list[i].at("shape").get<Shape>();
    if (name != ordered[i]->name) {
      throw std::invalid_argument("'" + path + "': parameter " + std::to_string(i) + " is '" +
                                  name + "', model expects '" + ordered[i]->name + "'");
    }
    if (shape != ordered[i]->value.shape()) {
      throw std::invalid_argument("'" + path + "': parameter '" + name + "' has shape " +
                                  shape_to_string(shape) + ", model expects " +
                                  shape_to_string(ordered[i]->value.shape()));
    }
    reader.take_f64(ordered[i]->value.data(), static_cast<std::size_t>(ordered[i]->value.size()),
                    name.c_str());
  }
  if (!reader.exhausted()) {
    throw std::invalid_argument("'" + path + "': trailing bytes after parameter payload");
  }
  return params;
}

}  // namespace duq
