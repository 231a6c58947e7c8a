#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "amt/dataset.hpp"
#include "amt/error.hpp"

namespace fs = std::filesystem;
using namespace amt;

namespace {

struct Fixture {
  fs::path root = fs::temp_directory_path() / ("amtkit_dl_" + std::to_string(::getpid()));
  fs::path remote = root / "remote";
  fs::path manifests = root / "manifests";
  fs::path out = root / "out";
  std::string payload = std::string(100000, 'x') + "end";

  Fixture() {
    fs::remove_all(root);
    fs::create_directories(remote);
    fs::create_directories(manifests);
    std::ofstream(remote / "archive.bin", std::ios::binary) << payload;
  }
  ~Fixture() { fs::remove_all(root); }

  DatasetManifest manifest(const std::string& sha) const {
    DatasetManifest m;
    m.name = "toy";
    m.files.push_back({"file://" + (remote / "archive.bin").string(), sha, "audio/archive.bin", std::nullopt, false});
    return m;
  }
  std::string sha() const { return sha256_hex(std::vector<std::uint8_t>(payload.begin(), payload.end())); }
};

ErrorCode code_of(const std::function<void()>& f, std::string* msg = nullptr) {
  try {
    f();
  } catch (const Error& e) {
    if (msg) *msg = e.what();
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::Internal;
}

}  // namespace

TEST(Sha256, KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({abc.begin(), abc.end()}), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Download, FetchVerifyAndIdempotentRerun) {
  Fixture f;
  auto first = download_dataset(f.manifest(f.sha()), f.out.string());
  EXPECT_EQ(first.files_fetched, 1);
  EXPECT_EQ(first.bytes_transferred, f.payload.size());
  EXPECT_EQ(sha256_file((f.out / "audio/archive.bin").string()), f.sha());
  auto again = download_dataset(f.manifest(f.sha()), f.out.string());
  EXPECT_EQ(again.files_skipped, 1);
  EXPECT_EQ(again.bytes_transferred, 0u);
}

TEST(Download, TamperedFileIsQuarantined) {
  Fixture f;
  std::string wrong(64, '0');
  EXPECT_EQ(code_of([&] { download_dataset(f.manifest(wrong), f.out.string()); }), ErrorCode::Checksum);
  EXPECT_TRUE(fs::exists(f.out / "quarantine/archive.bin"));
  EXPECT_FALSE(fs::exists(f.out / "audio/archive.bin"));
}

TEST(Download, ResumesPartialFile) {
  Fixture f;
  fs::create_directories(f.out / "audio");
  std::ofstream(f.out / "audio/archive.bin.part", std::ios::binary) << f.payload.substr(0, 60000);
  auto r = download_dataset(f.manifest(f.sha()), f.out.string());
  EXPECT_EQ(r.bytes_transferred, f.payload.size() - 60000);
  EXPECT_EQ(sha256_file((f.out / "audio/archive.bin").string()), f.sha());
}

TEST(Download, TransferFailureIsNetworkError) {
  Fixture f;
  auto m = f.manifest(f.sha());
  m.files[0].url = "file://" + (f.remote / "missing.bin").string();
  EXPECT_EQ(code_of([&] { download_dataset(m, f.out.string()); }), ErrorCode::Network);
}

TEST(Download, UnpinnedChecksumIsRefused) {
  Fixture f;
  EXPECT_EQ(code_of([&] { download_dataset(f.manifest(""), f.out.string()); }), ErrorCode::Manifest);
}

TEST(Manifests, UnknownNameListsAvailable) {
  Fixture f;
  std::ofstream(f.manifests / "alpha.json") << f.manifest(f.sha()).to_json();
  std::ofstream(f.manifests / "beta.json") << f.manifest(f.sha()).to_json();
  std::string msg;
  EXPECT_EQ(code_of([&] { load_manifest("gamma", f.manifests.string()); }, &msg), ErrorCode::Manifest);
  EXPECT_NE(msg.find("alpha, beta"), std::string::npos) << msg;
  EXPECT_EQ(load_manifest("alpha", f.manifests.string()).files.size(), 1u);
}

TEST(Manifests, RejectsEscapingPaths) {
  Fixture f;
  auto m = f.manifest(f.sha());
  m.files[0].path = "../evil";
  EXPECT_EQ(code_of([&] { DatasetManifest::from_json(m.to_json()); }), ErrorCode::Manifest);
  EXPECT_EQ(code_of([&] { DatasetManifest::from_json("{}"); }), ErrorCode::Manifest);
}

TEST(Manifests, BundledManifestsParse) {
  const std::string dir = std::string(AMTKIT_SOURCE_DIR) + "/manifests";
  const auto names = available_manifests(dir);
  EXPECT_FALSE(names.empty());
  for (const auto& n : names) EXPECT_NO_THROW(load_manifest(n, dir)) << n;
}
