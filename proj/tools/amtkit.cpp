// amtkit command line: <task> <verb> [OPTIONS] INPUT, plus sonify/download/config.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "amt/dataset.hpp"
#include "amt/error.hpp"
#include "amt/pipeline.hpp"

namespace {

using namespace amt;

struct Common {
  std::string config_path;
  std::string model_path;
  std::string output;
  std::optional<double> threshold;
  std::optional<std::uint64_t> seed;
  int workers = 0;

  PipelineConfig load() const {
    PipelineConfig c = config_path.empty() ? PipelineConfig::defaults() : PipelineConfig::from_file(config_path);
    if (workers > 0) c.workers = workers;
    if (seed) {
      for (auto& [task, tc] : c.training) tc.seed = *seed;
      for (auto& [task, mc] : c.models) mc.seed = *seed;
    }
    return c;
  }
};

void add_common(CLI::App* cmd, Common& o) {
  cmd->add_option("--config", o.config_path, "JSON pipeline configuration")->check(CLI::ExistingFile);
  cmd->add_option("--model-path", o.model_path, "checkpoint file or directory");
  cmd->add_option("--output", o.output, "output file or directory");
  cmd->add_option("--threshold", o.threshold, "activation/onset threshold in (0, 1)");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--workers", o.workers, "parallel files")->check(CLI::PositiveNumber);
}

int run(int argc, char** argv) {
  CLI::App app{"amtkit: automatic music transcription workbench"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> inputs;
  std::string reference;
  int clips = 8;
  int epochs = -1;
  double clip_s = SyntheticParams{}.clip_s;
  bool multi = false;
  std::function<int()> action;

  for (CliTask task : {CliTask::Music, CliTask::Drum, CliTask::Vocal, CliTask::Chord, CliTask::Beat}) {
    const std::string name = cli_task_name(task);
    CLI::App* t = app.add_subcommand(name, name + " transcription");
    t->require_subcommand(1);

    CLI::App* tr = t->add_subcommand("transcribe", "transcribe audio (MIDI for beat)");
    add_common(tr, common);
    tr->add_option("INPUT", inputs, "input files")->required();
    tr->callback([&, task] {
      action = [&, task] {
        PipelineConfig c = common.load();
        TranscribeOptions o{common.model_path, common.output, common.threshold};
        for (const auto& out : transcribe_batch(task, inputs, c, o, c.workers)) std::cout << out << "\n";
        return 0;
      };
    });

    CLI::App* train_cmd = t->add_subcommand("train", "train on a dataset directory");
    add_common(train_cmd, common);
    train_cmd->add_option("--epochs", epochs, "override the configured epoch count");
    train_cmd->add_option("INPUT", inputs, "dataset directory")->required()->expected(1);
    train_cmd->callback([&, task] {
      action = [&, task] {
        PipelineConfig c = common.load();
        if (epochs >= 0)
          for (auto& [k, tc] : c.training) tc.epochs = epochs;
        const std::string out = common.output.empty() ? c.resolved_checkpoint_dir() : common.output;
        TrainResult r = train_cli(task, inputs.front(), c, out, common.model_path);
        for (std::size_t i = 0; i < r.checkpoints.size(); ++i) {
          std::cout << r.checkpoints[i];
          if (!r.histories[i].empty())
            std::cout << " loss " << r.histories[i].front() << " -> " << r.histories[i].back();
          std::cout << "\n";
        }
        return 0;
      };
    });

    CLI::App* ev = t->add_subcommand("evaluate", "score an estimate against a reference");
    add_common(ev, common);
    ev->add_option("--reference", reference, "ground-truth file")->required();
    ev->add_option("INPUT", inputs, "estimate file")->required()->expected(1);
    ev->callback([&, task] {
      action = [&, task] {
        std::cout << evaluate_files(task, reference, inputs.front());
        return 0;
      };
    });

    CLI::App* gen = t->add_subcommand("generate", "write a synthetic dataset");
    add_common(gen, common);
    gen->add_option("--clips", clips, "number of clips")->check(CLI::PositiveNumber);
    gen->add_option("--clip-seconds", clip_s, "clip length");
    if (task == CliTask::Music) gen->add_flag("--multi-instrument", multi, "11-instrument targets");
    gen->add_option("INPUT", inputs, "output directory")->required()->expected(1);
    gen->callback([&, task] {
      action = [&, task] {
        SyntheticParams p;
        p.clip_s = clip_s;
        p.multi_instrument = multi;
        generate_synthetic_dataset(task, clips, common.seed.value_or(0), inputs.front(), common.load(), p);
        std::cout << inputs.front() << "\n";
        return 0;
      };
    });
  }

  CLI::App* son = app.add_subcommand("sonify", "render a MIDI file to WAV");
  add_common(son, common);
  son->add_option("INPUT", inputs, "MIDI file")->required()->expected(1);
  son->callback([&] {
    action = [&] {
      namespace fs = std::filesystem;
      std::string out = common.output;
      if (out.empty()) out = fs::path(inputs.front()).replace_extension(".wav").string();
      sonify_file(inputs.front(), out, common.seed.value_or(0));
      std::cout << out << "\n";
      return 0;
    };
  });

  std::string manifest_dir = "manifests";
  CLI::App* dl = app.add_subcommand("download", "fetch and verify a dataset listed in a manifest");
  dl->add_option("--manifests", manifest_dir, "manifest directory");
  dl->add_option("--output", common.output, "destination directory");
  dl->add_option("INPUT", inputs, "manifest name")->required()->expected(1);
  dl->callback([&] {
    action = [&] {
      DatasetManifest m = load_manifest(inputs.front(), manifest_dir);
      const std::string out = common.output.empty() ? "data/datasets/" + m.name : common.output;
      DownloadReport r = download_dataset(m, out);
      std::cout << "fetched " << r.files_fetched << " skipped " << r.files_skipped << " bytes "
                << r.bytes_transferred << "\n";
      return 0;
    };
  });

  CLI::App* cfg = app.add_subcommand("config", "print the default configuration as JSON");
  cfg->callback([&] {
    action = [&] {
      std::cout << PipelineConfig::defaults().to_json();
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "E_INPUT: " << e.what() << "\n";
    return 2;
  }
  return action ? action() : 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const amt::Error& e) {
    std::cerr << amt::error_code_name(e.code()) << ": " << e.what() << "\n";
    return amt::exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "E_INTERNAL: " << e.what() << "\n";
    return 1;
  }
}
