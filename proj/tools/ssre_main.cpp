#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssre/cli.hpp"
#include "ssre/errors.hpp"

namespace {

using namespace ssre;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int dispatch(const std::string& command, const ExperimentConfig& cfg) {
  if (command == "synth") {
    auto s = cmd_synth(cfg);
    std::cout << "wrote " << s.stats.num_examples << " examples ("
              << s.stats.num_relations << " labels, na fraction "
              << s.stats.na_fraction << ") -> " << s.corpus_path << "\n"
              << "synonyms -> " << s.synonyms_path << "\n";
  } else if (command == "split") {
    auto s = cmd_split(cfg);
    std::cout << "labelled " << s.labelled << " / unlabelled " << s.unlabelled
              << " / dev " << s.remainder << " -> " << s.manifest_path << "\n";
  } else if (command == "augment") {
    auto s = cmd_augment(cfg);
    std::cout << "records " << s.records << ", attempts " << s.attempts
              << ", satisfied " << s.satisfied << ", fallbacks " << s.fallbacks
              << ", failures " << s.failures << " -> " << s.cache_path << "\n";
  } else if (command == "train") {
    auto s = cmd_train(cfg);
    std::cout << "best dev F1 " << s.fit.best_f1 << " at epoch "
              << s.fit.best_epoch << " (" << s.fit.history.size()
              << " epochs) -> " << s.checkpoint_path << "\n"
              << "metrics -> " << s.metrics_path << "\n";
  } else if (command == "eval") {
    auto s = cmd_eval(cfg);
    std::cout << cfg.eval_split << " examples " << s.examples << ": micro F1 "
              << s.result.micro_f1 << ", precision "
              << s.result.micro_precision << ", recall "
              << s.result.micro_recall << " -> " << s.eval_path << "\n";
  } else if (command == "gridsearch") {
    auto s = cmd_gridsearch(cfg);
    std::cout << s.trials.size() << " trials; best dev F1 " << s.best_f1
              << "; best: T=" << s.best.T << " gamma=" << s.best.gamma
              << " beta=" << s.best.beta << " gamma_m=" << s.best.gamma_m
              << " -> " << s.trials_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised relation extraction experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  std::string data;
  std::vector<std::string> overrides;
  long long seed = -1;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a synthetic relation corpus"},
      {"split", "write a stratified split manifest"},
      {"augment", "back-translate the unlabelled split into a cache"},
      {"train", "fit a model and save its checkpoint"},
      {"eval", "score a saved checkpoint on a split"},
      {"gridsearch", "sweep hyperparameters one axis at a time"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sc = app.add_subcommand(name, desc);
    sc->add_option("--config", config_path, "key = value config file");
    sc->add_option("--set", overrides, "config override, key=value");
    sc->add_option("--out", out,
                   "output directory (synth: a .jsonl path names the corpus "
                   "file itself)");
    sc->add_option("--data", data, "corpus path (sets data.path)");
    sc->add_option("--seed", seed, "override every stage seed at once");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    ConfigMap map =
        config_path.empty() ? ConfigMap{} : parse_config_file(config_path);
    for (const auto& assignment : overrides) apply_override(map, assignment);
    if (!data.empty()) map["data.path"] = data;
    if (!out.empty()) {
      if (command == "synth" && ends_with(out, ".jsonl")) {
        map["data.path"] = out;
        auto parent = std::filesystem::path(out).parent_path().string();
        map["data.out_dir"] = parent.empty() ? "." : parent;
      } else {
        map["data.out_dir"] = out;
      }
    }
    if (seed >= 0) {
      for (const char* key : {"synth.seed", "split.seed", "augment.seed",
                              "encoder.seed", "train.seed"}) {
        map[key] = std::to_string(seed);
      }
    }
    return dispatch(command, ExperimentConfig::from_map(map));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const UnsatisfiableError& e) {
    std::cerr << "constraint error: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
