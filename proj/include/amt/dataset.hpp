// Dataset manifests and verified downloads.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace amt {

struct ManifestFile {
  std::string url;
  std::string sha256;  // lowercase hex; empty when no stable checksum is published
  std::string path;    // relative to the dataset directory
  std::optional<std::uint64_t> size;
  bool extract = false;  // unpack with tar after verification
};

struct DatasetManifest {
  std::string name;
  std::string description;
  std::string license;
  std::string homepage;
  std::string layout;  // free-text description of the unpacked directory tree
  std::vector<ManifestFile> files;

  /// Throws Error(E_MANIFEST) naming the offending entry.
  static DatasetManifest from_json(const std::string& text);
  std::string to_json() const;
};

/// Manifests found as <dir>/<name>.json, sorted by name.
std::vector<std::string> available_manifests(const std::string& manifest_dir);
/// Throws Error(E_MANIFEST) listing the available names when `name` is unknown.
DatasetManifest load_manifest(const std::string& name, const std::string& manifest_dir);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_file(const std::string& path);

struct DownloadReport {
  int files_fetched = 0;
  int files_skipped = 0;  // already present and verified
  std::uint64_t bytes_transferred = 0;
};

/// Fetches every file of the manifest into out_dir/<path>. Files already present with a
/// matching checksum are skipped. Partial downloads are kept as <path>.part and resumed.
/// A checksum mismatch moves the file to out_dir/quarantine/ and throws E_CHECKSUM;
/// transfer failures throw E_NET. Entries without a checksum are refused (E_MANIFEST).
DownloadReport download_dataset(const DatasetManifest& manifest, const std::string& out_dir);

}  // namespace amt
