#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "eyeref/core.hpp"

namespace eyeref {

enum class BitDepth { eight = 8, sixteen = 16 };

/// Lossless PNG RGB raster. Errors: IOError(path).
void save_image(const Image& image, const std::filesystem::path& path, BitDepth depth = BitDepth::eight);

/// Reads 8- or 16-bit PNG (gray, gray+alpha, RGB, RGBA; alpha dropped).
/// Errors: IOError(path), UnsupportedFormat(path).
Image load_image(const std::filesystem::path& path);

/// Single-channel 8-bit raster holding labels {0,1,2}.
void save_mask(const ClassMask& mask, const std::filesystem::path& path);
ClassMask load_mask(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset manifest:
//   image_path,mask_path,yaw_deg,pitch_deg,domain[,head_yaw_deg,head_pitch_deg]
// Relative paths resolve against the manifest's directory.

struct ManifestRow {
  std::string image_path;
  std::string mask_path;  // may be empty
  std::string yaw_deg;    // kept verbatim so copies are bit-exact
  std::string pitch_deg;
  std::string domain;
  std::string head_yaw_deg;
  std::string head_pitch_deg;
};

struct Manifest {
  std::filesystem::path directory;
  std::vector<ManifestRow> rows;
  bool has_head_pose = false;
};

inline constexpr const char* kManifestHeader = "image_path,mask_path,yaw_deg,pitch_deg,domain";

/// Parses the CSV without touching the referenced files. Errors:
/// MissingFile(path), ParseError(row number, 1-based data row).
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Reads the manifest and every referenced image/mask into validated
/// samples. Errors: ParseError(row), MissingImage(path).
std::vector<GazeSample> load_manifest(const std::filesystem::path& path);

/// Resolves a manifest-relative path.
std::filesystem::path resolve(const Manifest& manifest, const std::string& p);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_exact(double v);

}  // namespace eyeref
