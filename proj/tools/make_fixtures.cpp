// Regenerates the bundled fixtures (data/fixtures) and toy checkpoints (data/checkpoints).
//
// Each task gets a small synthetic dataset of 5 s clips; clip 0000 becomes the fixture and
// the toy checkpoint is trained on the whole set. Output is deterministic.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "amt/error.hpp"
#include "amt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace amt;

namespace {

struct FixtureSpec {
  CliTask task;
  const char* name;
  int clips;
  int notes;
  int epochs;
  bool multi = false;
};

void copy_over(const fs::path& from, const fs::path& to) {
  fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regenerate bundled fixtures and toy checkpoints"};
  std::string root = "data";
  std::string work = "build/fixture_work";
  double scale = 1.0;
  std::vector<std::string> only;
  app.add_option("--root", root, "data directory");
  app.add_option("--work", work, "scratch directory for the synthetic datasets");
  app.add_option("--epoch-scale", scale, "multiply every epoch count (quick smoke runs)");
  app.add_option("--only", only, "regenerate just these fixtures (piano, ensemble, drums, vocal, chords, click)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<FixtureSpec> specs{
      {CliTask::Music, "piano", 2, 12, 200},
      {CliTask::Music, "ensemble", 2, 12, 200, true},
      {CliTask::Drum, "drums", 4, 8, 60},
      {CliTask::Vocal, "vocal", 4, 6, 300},
      {CliTask::Chord, "chords", 6, 0, 200},
      {CliTask::Beat, "click", 4, 0, 150},
  };
  try {
    const fs::path fixtures = fs::path(root) / "fixtures", checkpoints = fs::path(root) / "checkpoints";
    fs::create_directories(fixtures);
    fs::create_directories(checkpoints);
    PipelineConfig config = PipelineConfig::defaults();
    for (const auto& spec : specs) {
      if (!only.empty() && std::find(only.begin(), only.end(), spec.name) == only.end()) continue;
      const auto start = std::chrono::steady_clock::now();
      const fs::path set = fs::path(work) / spec.name;
      fs::remove_all(set);
      SyntheticParams p;
      p.clip_s = 5.0;
      p.notes_per_clip = spec.notes;
      p.low_pitch = spec.task == CliTask::Vocal ? 55 : 40;
      p.high_pitch = spec.task == CliTask::Vocal ? 76 : 84;
      PipelineConfig c = config;
      for (auto& [t, tc] : c.training) tc.epochs = std::max(0, static_cast<int>(spec.epochs * scale));
      p.multi_instrument = spec.multi;
      generate_synthetic_dataset(spec.task, spec.clips, 11, set.string(), c, p);
      TrainResult r = train_cli(spec.task, set.string(), c, checkpoints.string());

      const std::string name = spec.name;
      if (spec.task == CliTask::Beat) {
        copy_over(set / "clips" / "0000.mid", fixtures / (name + ".mid"));
        copy_over(set / "labels" / "0000.beats.txt", fixtures / (name + ".beats.txt"));
      } else {
        copy_over(set / "clips" / "0000.wav", fixtures / (name + ".wav"));
        if (spec.task == CliTask::Chord) copy_over(set / "labels" / "0000.chords.txt", fixtures / (name + ".chords.txt"));
        else copy_over(set / "midi" / "0000.mid", fixtures / (name + ".ref.mid"));
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      for (std::size_t i = 0; i < r.checkpoints.size(); ++i) {
        std::cout << r.checkpoints[i];
        if (!r.histories[i].empty()) std::cout << ": loss " << r.histories[i].front() << " -> " << r.histories[i].back();
        std::cout << " (" << secs << " s)\n";
      }
      for (const auto& f : fs::directory_iterator(checkpoints))
        if (f.path().extension() == ".txt") fs::remove(f.path());
    }
  } catch (const Error& e) {
    std::cerr << error_code_name(e.code()) << ": " << e.what() << "\n";
    return exit_status(e.code());
  }
  return 0;
}
