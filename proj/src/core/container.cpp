#include "panp/core/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <fmt/format.h>

namespace panp {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'A', 'D', 'F'};
constexpr std::size_t kPreamble = 9;

using Kind = ContainerError::Kind;

nlohmann::json header_to_json(const ContainerHeader& h) {
  nlohmann::json j;
  j["role"] = std::string(to_string(h.role));
  j["rows"] = h.rows;
  j["cols"] = h.cols;
  if (h.sample_rate_hz) j["sample_rate_hz"] = *h.sample_rate_hz;
  if (h.pixel_size_m) j["pixel_size_m"] = *h.pixel_size_m;
  j["extra"] = h.extra;
  return j;
}

ContainerHeader header_from_json(const nlohmann::json& j) {
  ContainerHeader h;
  try {
    h.role = role_from_string(j.at("role").get<std::string>());
    h.rows = j.at("rows").get<std::size_t>();
    h.cols = j.at("cols").get<std::size_t>();
    if (j.contains("sample_rate_hz")) h.sample_rate_hz = j["sample_rate_hz"].get<double>();
    if (j.contains("pixel_size_m")) h.pixel_size_m = j["pixel_size_m"].get<double>();
    h.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(Kind::bad_header, fmt::format("malformed container header: {}", e.what()));
  } catch (const Error& e) {
    throw ContainerError(Kind::bad_header, e.what());
  }
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_container(const ContainerHeader& header,
                                           const Array2D<float>& payload) {
  if (payload.rows() != header.rows || payload.cols() != header.cols)
    throw ContainerError(Kind::dimension_mismatch,
                         fmt::format("payload is {}x{} but header says {}x{}", payload.rows(),
                                     payload.cols(), header.rows, header.cols));
  if (!all_finite(payload)) throw ContainerError(Kind::non_finite, "payload has non-finite values");

  const std::string text = header_to_json(header).dump();
  const auto n = static_cast<std::uint32_t>(text.size());
  std::vector<std::uint8_t> out(kPreamble + text.size() + payload.size() * sizeof(float));
  std::memcpy(out.data(), kMagic, 4);
  out[4] = kContainerVersion;
  std::memcpy(out.data() + 5, &n, 4);
  std::memcpy(out.data() + kPreamble, text.data(), text.size());
  std::memcpy(out.data() + kPreamble + text.size(), payload.data(), payload.size() * sizeof(float));
  return out;
}

std::pair<ContainerHeader, Array2D<float>> decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPreamble) throw ContainerError(Kind::truncated, "container shorter than preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ContainerError(Kind::bad_magic, "bad magic");
  if (bytes[4] != kContainerVersion)
    throw ContainerError(Kind::bad_version, fmt::format("unsupported container version {}", bytes[4]));
  std::uint32_t n = 0;
  std::memcpy(&n, bytes.data() + 5, 4);
  if (bytes.size() < kPreamble + n) throw ContainerError(Kind::truncated, "truncated header");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + n);
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(Kind::bad_header, fmt::format("header is not JSON: {}", e.what()));
  }
  ContainerHeader header = header_from_json(j);

  const std::size_t payload_bytes = bytes.size() - kPreamble - n;
  const std::size_t expected = header.rows * header.cols * sizeof(float);
  if (payload_bytes < expected)
    throw ContainerError(Kind::truncated,
                         fmt::format("truncated payload: {} of {} bytes", payload_bytes, expected));
  if (payload_bytes > expected)
    throw ContainerError(Kind::dimension_mismatch,
                         fmt::format("payload has {} bytes but header dimensions {}x{} need {}",
                                     payload_bytes, header.rows, header.cols, expected));

  Array2D<float> payload(header.rows, header.cols);
  std::memcpy(payload.data(), bytes.data() + kPreamble + n, expected);
  return {std::move(header), std::move(payload)};
}

void write_container(const std::filesystem::path& path, const ContainerHeader& header,
                     const Array2D<float>& payload) {
  const auto bytes = encode_container(header, payload);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContainerError(Kind::io, fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ContainerError(Kind::io, fmt::format("write failed for {}", path.string()));
}

std::pair<ContainerHeader, Array2D<float>> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContainerError(Kind::io, fmt::format("cannot open {}", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const ContainerError& e) {
    throw ContainerError(e.kind(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

nlohmann::json to_json(const TransducerArray& a) {
  return {{"n_elements", a.n_elements}, {"pitch_m", a.pitch},
          {"center_freq_hz", a.center_freq}, {"frac_bandwidth", a.frac_bandwidth},
          {"sample_rate_hz", a.sample_rate}, {"n_samples", a.n_samples},
          {"sound_speed_m_s", a.sound_speed}};
}

TransducerArray transducer_from_json(const nlohmann::json& j) {
  TransducerArray a;
  a.n_elements = j.value("n_elements", a.n_elements);
  a.pitch = j.value("pitch_m", a.pitch);
  a.center_freq = j.value("center_freq_hz", a.center_freq);
  a.frac_bandwidth = j.value("frac_bandwidth", a.frac_bandwidth);
  a.sample_rate = j.value("sample_rate_hz", a.sample_rate);
  a.n_samples = j.value("n_samples", a.n_samples);
  a.sound_speed = j.value("sound_speed_m_s", a.sound_speed);
  return a;
}

nlohmann::json to_json(const Grid2D& g) { return {{"nx", g.nx}, {"nz", g.nz}, {"dx_m", g.dx}}; }

Grid2D grid_from_json(const nlohmann::json& j) {
  Grid2D g;
  g.nx = j.value("nx", g.nx);
  g.nz = j.value("nz", g.nz);
  g.dx = j.value("dx_m", g.dx);
  return g;
}

void save_rf(const std::filesystem::path& path, const RfFrame& frame, nlohmann::json extra) {
  ContainerHeader h;
  h.role = Role::rf;
  h.rows = frame.samples.rows();
  h.cols = frame.samples.cols();
  h.sample_rate_hz = frame.array.sample_rate;
  extra["array"] = to_json(frame.array);
  extra["units"] = "a.u.";
  h.extra = std::move(extra);
  write_container(path, h, frame.samples);
}

RfFrame load_rf(const std::filesystem::path& path) {
  auto [h, payload] = read_container(path);
  if (h.role != Role::rf) throw Error(fmt::format("{} holds role '{}', expected rf", path.string(), to_string(h.role)));
  RfFrame f;
  f.array = h.extra.contains("array") ? transducer_from_json(h.extra["array"]) : TransducerArray{};
  if (h.sample_rate_hz) f.array.sample_rate = *h.sample_rate_hz;
  f.array.n_samples = h.rows;
  f.array.n_elements = h.cols;
  f.samples = std::move(payload);
  return f;
}

void save_field(const std::filesystem::path& path, const ScalarField& field, nlohmann::json extra) {
  ContainerHeader h;
  h.role = field.role;
  h.rows = field.values.rows();
  h.cols = field.values.cols();
  h.pixel_size_m = field.grid.dx;
  extra["grid"] = to_json(field.grid);
  if (!extra.contains("units")) extra["units"] = "a.u.";
  h.extra = std::move(extra);
  write_container(path, h, field.values);
}

ScalarField load_field(const std::filesystem::path& path) {
  auto [h, payload] = read_container(path);
  Grid2D g{h.cols, h.rows, h.pixel_size_m.value_or(Grid2D{}.dx)};
  return ScalarField(g, std::move(payload), h.role);
}

void save_image(const std::filesystem::path& path, const PixelImage& image, Role role,
                nlohmann::json extra) {
  ContainerHeader h;
  h.role = role;
  h.rows = image.height();
  h.cols = image.width();
  h.pixel_size_m = image.pixel_size;
  if (!extra.contains("units")) extra["units"] = "a.u.";
  h.extra = std::move(extra);
  write_container(path, h, image.values);
}

PixelImage load_image(const std::filesystem::path& path) {
  auto [h, payload] = read_container(path);
  return PixelImage(std::move(payload), h.pixel_size_m.value_or(70e-6));
}

}  // namespace panp
