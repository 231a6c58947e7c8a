#include "amt/dataset.hpp"

#include <curl/curl.h>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>

#include "amt/error.hpp"

namespace amt {

namespace fs = std::filesystem;
using json = nlohmann::json;

DatasetManifest DatasetManifest::from_json(const std::string& text) {
  DatasetManifest m;
  try {
    json j = json::parse(text);
    m.name = j.at("name").get<std::string>();
    m.description = j.value("description", "");
    m.license = j.value("license", "");
    m.homepage = j.value("homepage", "");
    m.layout = j.value("layout", "");
    for (const auto& f : j.at("files")) {
      ManifestFile mf;
      mf.url = f.at("url").get<std::string>();
      mf.path = f.at("path").get<std::string>();
      mf.sha256 = f.value("sha256", "");
      if (f.contains("size") && !f["size"].is_null()) mf.size = f["size"].get<std::uint64_t>();
      mf.extract = f.value("extract", false);
      const fs::path p(mf.path);
      if (mf.path.empty() || p.is_absolute() ||
          std::any_of(p.begin(), p.end(), [](const fs::path& part) { return part == ".."; }))
        throw Error(ErrorCode::Manifest, "manifest " + m.name + ": file path '" + mf.path + "' must be relative");
      if (!mf.sha256.empty() && (mf.sha256.size() != 64 || mf.sha256.find_first_not_of("0123456789abcdef") != std::string::npos))
        throw Error(ErrorCode::Manifest, "manifest " + m.name + ": bad sha256 for " + mf.path);
      m.files.push_back(std::move(mf));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Manifest, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string DatasetManifest::to_json() const {
  json j{{"name", name}, {"description", description}, {"license", license}, {"homepage", homepage}, {"layout", layout}};
  j["files"] = json::array();
  for (const auto& f : files) {
    json e{{"url", f.url}, {"path", f.path}, {"sha256", f.sha256}, {"extract", f.extract}};
    e["size"] = f.size ? json(*f.size) : json(nullptr);
    j["files"].push_back(e);
  }
  return j.dump(2) + "\n";
}

std::vector<std::string> available_manifests(const std::string& manifest_dir) {
  std::vector<std::string> names;
  if (fs::is_directory(manifest_dir))
    for (const auto& e : fs::directory_iterator(manifest_dir))
      if (e.path().extension() == ".json") names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

DatasetManifest load_manifest(const std::string& name, const std::string& manifest_dir) {
  const auto names = available_manifests(manifest_dir);
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw Error(ErrorCode::Manifest, "unknown manifest '" + name + "'; available: " + (list.empty() ? "(none)" : list));
  }
  std::ifstream is(fs::path(manifest_dir) / (name + ".json"));
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return DatasetManifest::from_json(text);
}

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw Error(ErrorCode::Internal, "SHA-256 unavailable");
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      out += buf;
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

void curl_global() {
  static std::once_flag once;
  std::call_once(once, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });
}

struct Sink {
  std::FILE* file = nullptr;
  std::uint64_t bytes = 0;
};

std::size_t write_cb(char* data, std::size_t size, std::size_t n, void* user) {
  auto* sink = static_cast<Sink*>(user);
  const std::size_t written = std::fwrite(data, size, n, sink->file);
  sink->bytes += written * size;
  return written * size;
}

/// Appends the remote bytes after `offset` to `part`; returns bytes received.
std::uint64_t fetch(const std::string& url, const fs::path& part, std::uint64_t offset) {
  curl_global();
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw Error(ErrorCode::Network, "cannot initialize transfer for " + url);
  std::unique_ptr<std::FILE, decltype(&std::fclose)> file(std::fopen(part.c_str(), offset ? "ab" : "wb"), std::fclose);
  if (!file) throw Error(ErrorCode::Input, part.string() + ": cannot write file");
  Sink sink{file.get(), 0};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_cb);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &sink);
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
  if (offset) curl_easy_setopt(curl.get(), CURLOPT_RESUME_FROM_LARGE, static_cast<curl_off_t>(offset));
  const CURLcode rc = curl_easy_perform(curl.get());
  if (rc != CURLE_OK)
    throw Error(ErrorCode::Network, "download of " + url + " failed: " + curl_easy_strerror(rc) +
                                        " (partial data kept for resume)");
  return sink.bytes;
}

}  // namespace

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Input, path + ": cannot open file");
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

DownloadReport download_dataset(const DatasetManifest& manifest, const std::string& out_dir) {
  for (const auto& f : manifest.files)
    if (f.sha256.empty())
      throw Error(ErrorCode::Manifest, "manifest " + manifest.name + " has no pinned checksum for " + f.path +
                                           "; fetch it manually from " + (manifest.homepage.empty() ? f.url : manifest.homepage));
  DownloadReport report;
  const fs::path root(out_dir);
  fs::create_directories(root);
  for (const auto& f : manifest.files) {
    const fs::path target = root / f.path;
    if (fs::exists(target) && sha256_file(target.string()) == f.sha256) {
      ++report.files_skipped;
      continue;
    }
    fs::create_directories(target.parent_path());
    const fs::path part = target.string() + ".part";
    const std::uint64_t offset = fs::exists(part) ? fs::file_size(part) : 0;
    report.bytes_transferred += fetch(f.url, part, offset);
    ++report.files_fetched;
    if (sha256_file(part.string()) != f.sha256) {
      const fs::path quarantine = root / "quarantine" / fs::path(f.path).filename();
      fs::create_directories(quarantine.parent_path());
      fs::rename(part, quarantine);
      throw Error(ErrorCode::Checksum, f.path + ": checksum mismatch; file moved to " + quarantine.string());
    }
    fs::rename(part, target);
    if (f.extract) {
      const std::string cmd = "tar -xf '" + target.string() + "' -C '" + target.parent_path().string() + "'";
      if (std::system(cmd.c_str()) != 0) throw Error(ErrorCode::Data, target.string() + ": cannot unpack archive");
    }
  }
  return report;
}

}  // namespace amt
