#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "panp/core/error.hpp"
#include "panp/core/types.hpp"

namespace panp {

// On-disk layout (all integers little-endian):
//   bytes 0-3  magic "PADF"
//   byte  4    version (1)
//   bytes 5-8  header length N (u32)
//   N bytes    UTF-8 JSON header {role, rows, cols, sample_rate_hz | pixel_size_m, extra}
//   rows*cols  float32 payload, row-major
inline constexpr std::uint8_t kContainerVersion = 1;

struct ContainerHeader {
  Role role = Role::rf;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::optional<double> sample_rate_hz;
  std::optional<double> pixel_size_m;
  nlohmann::json extra = nlohmann::json::object();

  bool operator==(const ContainerHeader&) const = default;
};

class ContainerError : public Error {
 public:
  enum class Kind { io, bad_magic, bad_version, bad_header, dimension_mismatch, truncated, non_finite };

  ContainerError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Serializes to an in-memory byte buffer (the exact file contents).
std::vector<std::uint8_t> encode_container(const ContainerHeader& header,
                                           const Array2D<float>& payload);
std::pair<ContainerHeader, Array2D<float>> decode_container(std::span<const std::uint8_t> bytes);

void write_container(const std::filesystem::path& path, const ContainerHeader& header,
                     const Array2D<float>& payload);
std::pair<ContainerHeader, Array2D<float>> read_container(const std::filesystem::path& path);

// Typed conveniences over the raw container.
void save_rf(const std::filesystem::path& path, const RfFrame& frame,
             nlohmann::json extra = nlohmann::json::object());
RfFrame load_rf(const std::filesystem::path& path);

void save_field(const std::filesystem::path& path, const ScalarField& field,
                nlohmann::json extra = nlohmann::json::object());
ScalarField load_field(const std::filesystem::path& path);

void save_image(const std::filesystem::path& path, const PixelImage& image, Role role,
                nlohmann::json extra = nlohmann::json::object());
PixelImage load_image(const std::filesystem::path& path);

nlohmann::json to_json(const TransducerArray& array);
TransducerArray transducer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Grid2D& grid);
Grid2D grid_from_json(const nlohmann::json& j);

}  // namespace panp
