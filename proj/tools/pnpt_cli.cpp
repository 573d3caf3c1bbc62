#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pnpt/config.hpp"
#include "pnpt/datagen.hpp"
#include "pnpt/dataset.hpp"
#include "pnpt/eval.hpp"
#include "pnpt/image.hpp"
#include "pnpt/train.hpp"

namespace fs = std::filesystem;
using namespace pnpt;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string device;
  bool json = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config_path, "config file (dotted key=value lines)")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "override a config key, e.g. --set train.epochs=5")->take_all();
    cmd->add_option("--device", c.device, "compute device (this build: cpu)");
  }
  cmd->add_option("--seed", c.seed, "seed controlling this command's randomness")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_flag("--json", c.json, "print a machine-readable JSON summary on stdout");
}

RunConfig resolve_config(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::from_file(c.config_path);
  for (const auto& s : c.sets) cfg.apply_override(s);
  RunConfig rc = run_config_from(cfg);
  if (c.seed_given) rc.seed = c.seed;
  if (!c.device.empty()) rc.device = c.device;
  rc.validate();
  return rc;
}

RunConfig config_from_checkpoint(const LoadedCheckpoint& ck, const Common& c) {
  Config cfg = materialize(ck.rc);
  for (const auto& s : c.sets) cfg.apply_override(s);
  RunConfig rc = run_config_from(cfg);
  if (!c.device.empty()) rc.device = c.device;
  rc.validate();
  return rc;
}

NormalityPool load_pool_checked(const std::string& path, const Backbone& backbone) {
  NormalityPool pool = load_pool(path);
  if (pool.backbone_fingerprint != backbone.fingerprint()) {
    throw std::runtime_error("pool " + path + " was built with a different backbone");
  }
  return pool;
}

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::vector<int> parse_int_list(const std::string& csv, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoi(tok));
    } catch (...) {
      throw std::runtime_error(what + ": bad integer '" + tok + "'");
    }
  }
  if (out.empty()) throw std::runtime_error(what + ": empty list");
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"pnpt: prior-normality prompting for unified multi-class anomaly detection"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate the deterministic synthetic corpus");
  Common synth_c;
  std::string synth_out;
  bool synth_force = false;
  int synth_size = SynthSpec{}.image_size, synth_train = SynthSpec{}.n_train;
  int synth_normal = SynthSpec{}.n_test_normal, synth_anom = SynthSpec{}.n_test_anomalous;
  synth->add_option("--out", synth_out, "output dataset root")->required();
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");
  synth->add_option("--image-size", synth_size, "image side length");
  synth->add_option("--train-per-class", synth_train, "training images per class");
  synth->add_option("--test-normal-per-class", synth_normal, "normal test images per class");
  synth->add_option("--test-anomalous-per-class", synth_anom, "anomalous test images per class");
  add_common(synth, synth_c, /*with_config=*/false);

  // build-pool
  auto* bp = app.add_subcommand("build-pool", "build the class-prototype normality pool");
  Common bp_c;
  std::string bp_data, bp_out;
  bp->add_option("--data-root", bp_data, "dataset root (train/good images)")->required()->check(CLI::ExistingDirectory);
  bp->add_option("--out", bp_out, "pool archive path")->required();
  add_common(bp, bp_c);

  // train
  auto* tr = app.add_subcommand("train", "train the reconstruction model");
  Common tr_c;
  std::string tr_data, tr_pool, tr_out, tr_ckpt;
  tr->add_option("--data-root", tr_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--pool", tr_pool, "pool archive path")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "run directory (checkpoint + loss log)")->required();
  tr->add_option("--checkpoint", tr_ckpt, "resume from this checkpoint")->check(CLI::ExistingFile);
  add_common(tr, tr_c);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint over a test split");
  Common ev_c;
  std::string ev_data, ev_pool, ev_ckpt, ev_out;
  bool ev_maps = false;
  ev->add_option("--data-root", ev_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--pool", ev_pool, "pool archive path")->required()->check(CLI::ExistingFile);
  ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", ev_out, "report directory")->required();
  ev->add_flag("--save-maps", ev_maps, "write per-image anomaly-map files under <out>/maps");
  add_common(ev, ev_c);

  // score
  auto* sc = app.add_subcommand("score", "score a single image");
  Common sc_c;
  std::string sc_pool, sc_ckpt, sc_image, sc_out;
  sc->add_option("image", sc_image, "image to score")->required()->check(CLI::ExistingFile);
  sc->add_option("--pool", sc_pool, "pool archive path")->required()->check(CLI::ExistingFile);
  sc->add_option("--checkpoint", sc_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", sc_out, "output prefix for <prefix>_map.png / <prefix>.json")->required();
  add_common(sc, sc_c);

  // bench-retrieval
  auto* br = app.add_subcommand("bench-retrieval", "time nearest-coding retrieval vs class and training-set size");
  Common br_c;
  std::string br_classes = "2,5,10,20", br_images = "100,1000", br_out;
  int br_dim = 112;
  br->add_option("--classes", br_classes, "comma-separated pool sizes K");
  br->add_option("--images", br_images, "comma-separated training-set sizes N");
  br->add_option("--dim", br_dim, "coding dimensionality");
  br->add_option("--out", br_out, "CSV output path (default: stdout)");
  add_common(br, br_c, /*with_config=*/false);

  // prompt-swap
  auto* ps = app.add_subcommand("prompt-swap", "measure branch behavior under a forced wrong-class prior");
  Common ps_c;
  std::string ps_data, ps_pool, ps_ckpt, ps_class, ps_out;
  ps->add_option("--data-root", ps_data, "dataset root")->required()->check(CLI::ExistingDirectory);
  ps->add_option("--pool", ps_pool, "pool archive path")->required()->check(CLI::ExistingFile);
  ps->add_option("--checkpoint", ps_ckpt, "trained checkpoint")->required()->check(CLI::ExistingFile);
  ps->add_option("--class", ps_class, "forced prior class (default: cyclic wrong class per image)");
  ps->add_option("--out", ps_out, "per-image CSV output path");
  add_common(ps, ps_c);

  CLI11_PARSE(app, argc, argv);

  if (*synth) {
    SynthSpec spec;
    spec.image_size = synth_size;
    spec.n_train = synth_train;
    spec.n_test_normal = synth_normal;
    spec.n_test_anomalous = synth_anom;
    spec.seed = synth_c.seed_given ? synth_c.seed : spec.seed;
    spec.classes = SynthSpec::default_classes();
    spec.validate();
    nlohmann::json manifest = generate_dataset(spec, synth_out, synth_force);
    if (synth_c.json) {
      std::cout << nlohmann::json{{"out", synth_out},
                                  {"classes", manifest["classes"].size()},
                                  {"images", manifest["images"].size()},
                                  {"seed", spec.seed}}
                       .dump(2)
                << "\n";
    } else {
      std::cout << "wrote " << manifest["images"].size() << " images for " << manifest["classes"].size()
                << " classes under " << synth_out << "\n";
    }
    return 0;
  }

  if (*bp) {
    RunConfig rc = resolve_config(bp_c);
    Backbone backbone = load_backbone(rc.backbone_spec());
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& item : list_train_images(bp_data)) pairs.emplace_back(item.class_id, item.path);
    NormalityPool pool = build_pool(pairs, backbone, rc.pool_metric, rc.normalize_codings);
    validate_pool(pool);
    save_pool(pool, bp_out);
    if (bp_c.json) {
      std::cout << nlohmann::json{{"pool", bp_out},
                                  {"classes", pool.classes},
                                  {"sample_counts", pool.sample_counts},
                                  {"metric", to_string(pool.metric)}}
                       .dump(2)
                << "\n";
    } else {
      std::cout << "pool over " << pool.num_classes() << " classes -> " << bp_out << "\n";
    }
    return 0;
  }

  if (*tr) {
    RunConfig rc = resolve_config(tr_c);
    Backbone backbone = load_backbone(rc.backbone_spec());
    NormalityPool pool = load_pool_checked(tr_pool, backbone);
    TrainResult result = tr_ckpt.empty() ? train(rc, tr_data, backbone, pool, tr_out)
                                         : resume_training(tr_ckpt, tr_data, backbone, pool, tr_out, &rc);
    const double final_loss = result.step_losses.empty() ? 0.0 : result.step_losses.back();
    if (tr_c.json) {
      std::cout << nlohmann::json{{"checkpoint", result.checkpoint_path},
                                  {"epochs_completed", result.epochs_completed},
                                  {"global_step", result.global_step},
                                  {"steps_this_run", result.step_losses.size()},
                                  {"final_loss", final_loss}}
                       .dump(2)
                << "\n";
    } else {
      std::cout << "trained to epoch " << result.epochs_completed << " (step " << result.global_step
                << ", last loss " << final_loss << ") -> " << result.checkpoint_path << "\n";
    }
    return 0;
  }

  if (*ev) {
    LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
    RunConfig rc = config_from_checkpoint(ck, ev_c);
    Backbone backbone = load_backbone(rc.backbone_spec());
    NormalityPool pool = load_pool_checked(ev_pool, backbone);
    if (pool_tag(pool) != ck.pool_tag) {
      throw std::runtime_error("checkpoint " + ev_ckpt + " was trained against a different pool");
    }
    PNPTModel model = model_from_checkpoint(ck);
    EvalOptions opts;
    if (ev_maps) opts.maps_dir = ev_out + "/maps";
    EvalReport report = evaluate_dataset(rc, ev_data, backbone, pool, model, opts);
    write_text(ev_out + "/report.csv", report.summary_csv());
    write_text(ev_out + "/records.csv", report.records_csv());
    write_text(ev_out + "/report.json", report.to_json().dump(2) + "\n");
    if (ev_c.json) {
      std::cout << report.to_json().dump(2) << "\n";
    } else {
      for (const auto& c : report.per_class) {
        std::cout << c.class_id << ": image AUROC " << c.image_auroc << ", pixel AUROC " << c.pixel_auroc << "\n";
      }
      std::cout << "mean: image AUROC " << report.mean_image_auroc << ", pixel AUROC " << report.mean_pixel_auroc
                << ", retrieval accuracy " << report.retrieval_accuracy << "\n";
    }
    return 0;
  }

  if (*sc) {
    LoadedCheckpoint ck = load_checkpoint(sc_ckpt);
    RunConfig rc = config_from_checkpoint(ck, sc_c);
    Backbone backbone = load_backbone(rc.backbone_spec());
    NormalityPool pool = load_pool_checked(sc_pool, backbone);
    if (pool_tag(pool) != ck.pool_tag) {
      throw std::runtime_error("checkpoint " + sc_ckpt + " was trained against a different pool");
    }
    PNPTModel model = model_from_checkpoint(ck);
    ScoredImage scored = score_image(load_image_rgb(sc_image), rc, backbone, pool, model);
    if (!fs::path(sc_out).parent_path().empty()) fs::create_directories(fs::path(sc_out).parent_path());
    save_anomaly_result(scored.result, sc_out, scored.retrieval.class_id);
    if (sc_c.json) {
      std::cout << nlohmann::json{{"image_score", scored.result.image_score},
                                  {"class_id_retrieved", scored.retrieval.class_id},
                                  {"map", sc_out + "_map.png"}}
                       .dump(2)
                << "\n";
    } else {
      std::cout << "image score " << scored.result.image_score << " (retrieved class "
                << scored.retrieval.class_id << ") -> " << sc_out << "_map.png\n";
    }
    return 0;
  }

  if (*br) {
    const auto rows = bench_retrieval(parse_int_list(br_classes, "--classes"), parse_int_list(br_images, "--images"),
                                      br_dim, br_c.seed);
    const std::string csv = bench_csv(rows);
    if (!br_out.empty()) write_text(br_out, csv);
    if (br_c.json) {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& r : rows) {
        j.push_back({{"classes", r.num_classes},
                     {"train_images", r.train_images},
                     {"queries", r.queries},
                     {"mean_latency_ns", r.mean_latency_ns}});
      }
      std::cout << j.dump(2) << "\n";
    } else if (br_out.empty()) {
      std::cout << csv;
    } else {
      std::cout << "wrote " << rows.size() << " rows -> " << br_out << "\n";
    }
    return 0;
  }

  if (*ps) {
    LoadedCheckpoint ck = load_checkpoint(ps_ckpt);
    RunConfig rc = config_from_checkpoint(ck, ps_c);
    Backbone backbone = load_backbone(rc.backbone_spec());
    NormalityPool pool = load_pool_checked(ps_pool, backbone);
    if (pool_tag(pool) != ck.pool_tag) {
      throw std::runtime_error("checkpoint " + ps_ckpt + " was trained against a different pool");
    }
    PNPTModel model = model_from_checkpoint(ck);
    PromptSwapReport report = prompt_swap_diagnostic(rc, ps_data, backbone, pool, model, ps_class);
    if (!ps_out.empty()) write_text(ps_out, report.csv());
    if (ps_c.json) {
      std::cout << report.to_json().dump(2) << "\n";
    } else {
      std::cout << "d_forced > d_correct on " << report.frac_forced_larger * 100.0 << "% of "
                << report.rows.size() << " images; mean prior change " << report.mean_prior_change
                << ", mean self drift " << report.mean_self_drift << "\n";
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
