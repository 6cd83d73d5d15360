#include "taskiq/nn/model_io.hpp"

#include <fstream>

#include "taskiq/binary_io.hpp"

namespace taskiq::nn {

namespace {

void put_shape(ByteWriter& w, const Shape& s) {
  w.put<std::int32_t>(s.c);
  w.put<std::int32_t>(s.h);
  w.put<std::int32_t>(s.w);
}

Shape get_shape(ByteReader& r) {
  Shape s;
  s.c = r.get<std::int32_t>();
  s.h = r.get<std::int32_t>();
  s.w = r.get<std::int32_t>();
  return s;
}

}  // namespace

void save_model(const std::filesystem::path& path, const MultiTaskNet<float>& net) {
  const Architecture& a = net.architecture();
  ByteWriter w;
  w.put_magic("TIQMODEL");
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::int32_t>(a.input_width);
  w.put<std::int32_t>(a.input_height);
  w.put<std::int32_t>(a.filters);
  w.put<std::int32_t>(a.kernel);
  w.put<std::int32_t>(a.shared_layers);
  w.put<std::int32_t>(a.estimation_layers);
  w.put<std::int32_t>(a.theta_dim);
  w.put<double>(a.leaky_slope);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
  for (const LayerSpec& l : net.layers()) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.kind));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.branch));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
    put_shape(w, l.in);
    put_shape(w, l.out);
    w.put<std::uint64_t>(l.n_params());
  }
  w.put<double>(net.in_offset);
  w.put<double>(net.in_scale);
  for (std::size_t k = 0; k < net.out_offset.size(); ++k) {
    w.put<double>(net.out_offset[k]);
    w.put<double>(net.out_scale[k]);
  }
  w.put<std::uint64_t>(net.n_params());
  for (float v : net.params()) w.put<float>(v);
  const std::uint32_t crc = crc32_of(w.bytes().data(), w.size());
  w.put<std::uint32_t>(crc);
  w.save(path);
}

MultiTaskNet<float> load_model(const std::filesystem::path& path) {
  ByteReader r = ByteReader::load(path);
  if (r.remaining() < 12) throw FormatError("model '" + path.string() + "': file too short");
  {
    const auto& bytes = r.bytes();
    const std::size_t body = bytes.size() - 4;
    ByteReader tail(std::vector<unsigned char>(bytes.begin() + static_cast<std::ptrdiff_t>(body), bytes.end()));
    if (tail.get<std::uint32_t>() != crc32_of(bytes.data(), body))
      throw FormatError("model '" + path.string() + "': checksum mismatch");
  }
  r.expect_magic("TIQMODEL");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion)
    throw FormatError("model '" + path.string() + "': unsupported version " + std::to_string(version));
  Architecture a;
  a.input_width = r.get<std::int32_t>();
  a.input_height = r.get<std::int32_t>();
  a.filters = r.get<std::int32_t>();
  a.kernel = r.get<std::int32_t>();
  a.shared_layers = r.get<std::int32_t>();
  a.estimation_layers = r.get<std::int32_t>();
  a.theta_dim = r.get<std::int32_t>();
  a.leaky_slope = r.get<double>();
  MultiTaskNet<float> net(a);
  const auto n_layers = r.get<std::uint32_t>();
  if (n_layers != net.layers().size()) throw FormatError("model: layer count disagrees with architecture");
  for (const LayerSpec& l : net.layers()) {
    const auto kind = r.get<std::uint8_t>();
    const auto branch = r.get<std::uint8_t>();
    const auto act = r.get<std::uint8_t>();
    const Shape in = get_shape(r);
    const Shape out = get_shape(r);
    const auto np = r.get<std::uint64_t>();
    if (kind != static_cast<std::uint8_t>(l.kind) || branch != static_cast<std::uint8_t>(l.branch) ||
        act != static_cast<std::uint8_t>(l.activation) || !(in == l.in) || !(out == l.out) || np != l.n_params())
      throw FormatError("model: layer record disagrees with architecture");
  }
  net.in_offset = static_cast<float>(r.get<double>());
  net.in_scale = static_cast<float>(r.get<double>());
  for (std::size_t k = 0; k < net.out_offset.size(); ++k) {
    net.out_offset[k] = static_cast<float>(r.get<double>());
    net.out_scale[k] = static_cast<float>(r.get<double>());
  }
  if (r.get<std::uint64_t>() != net.n_params()) throw FormatError("model: parameter count mismatch");
  for (float& v : net.params()) v = r.get<float>();
  return net;
}

void save_model_manifest(const std::filesystem::path& model_path, const std::string& manifest_json) {
  std::filesystem::path p = model_path;
  p += ".json";
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  out << manifest_json << '\n';
}

}  // namespace taskiq::nn
