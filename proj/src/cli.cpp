#include "offnadir/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "offnadir/evaluation.hpp"
#include "offnadir/gemm.hpp"
#include "offnadir/tensor_io.hpp"
#include "offnadir/threading.hpp"
#include "offnadir/training.hpp"

namespace offnadir {

namespace {

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    out.push_back(std::stod(tok));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_double_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  char buf[48];
  for (size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g", v[i]);
    if (i) s += ",";
    s += buf;
  }
  return s;
}

using MetaKv = std::vector<std::pair<std::string, std::string>>;

void write_run_meta(const std::filesystem::path& path, const std::string& subcommand,
                    const MetaKv& kv) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write run.meta: " + path.string());
  f << "tool=offnadir\n";
  f << "version=" << kToolVersion << "\n";
  f << "subcommand=" << subcommand << "\n";
  for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
  if (!f) throw std::runtime_error("run.meta write failed");
}

std::pair<double, double> parse_meta_pair(const std::string& s) {
  std::vector<double> v = parse_double_list(s);
  if (v.size() != 2)
    throw CLI::ValidationError("--meta", "expected ANGLE,GSD");
  return {v[0], v[1]};
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"uncertainty-aware building segmentation on an off-nadir benchmark"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: available cores)")
      ->envname("OFFNADIR_THREADS");
  std::string preset;
  app.add_option("--preset", preset, "named configuration preset")
      ->check(CLI::IsMember({"paper"}));

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  int g_scenes = 200, g_size = 64;
  uint64_t g_seed = 1;
  std::string g_angles, g_out;
  gen->add_option("--scenes", g_scenes, "number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--angles", g_angles, "comma-separated off-nadir angles in degrees");
  auto* g_size_opt = gen->add_option("--size", g_size, "image size in px");
  gen->add_option("--seed", g_seed, "master seed");
  gen->add_option("--out", g_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string t_data, t_out, t_unc = "none", t_inj = "none";
  int64_t t_iters = 20000;
  int t_batch = 16, t_size = 64;
  uint64_t t_seed = 1;
  tr->add_option("--data", t_data, "dataset directory")->required();
  tr->add_option("--uncertainty", t_unc, "uncertainty mode")
      ->check(CLI::IsMember({"none", "aleatoric", "epistemic", "both"}));
  tr->add_option("--inject", t_inj, "metadata injection mode")
      ->check(CLI::IsMember({"none", "metacat", "metaacm"}));
  auto* t_iters_opt = tr->add_option("--iters", t_iters, "training iterations");
  auto* t_batch_opt = tr->add_option("--batch", t_batch, "batch size");
  auto* t_size_opt = tr->add_option("--size", t_size, "model input size in px");
  tr->add_option("--seed", t_seed, "training seed");
  tr->add_option("--out", t_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_split = "test", e_corr = "on", e_out;
  int e_samples = 50;
  ev->add_option("--ckpt", e_ckpt, "checkpoint file")->required();
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--split", e_split, "dataset split")
      ->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--mc-samples", e_samples, "Monte Carlo samples")->check(CLI::PositiveNumber);
  ev->add_option("--corrected-labels", e_corr, "use corrected labels where present")
      ->check(CLI::IsMember({"on", "off"}));
  ev->add_option("--out", e_out, "output directory")->required();

  // ablate-mc
  auto* ab = app.add_subcommand("ablate-mc", "sweep Monte Carlo sample counts");
  std::string a_ckpt, a_nd_ckpt, a_data, a_samples = "1,2,5,10,20,30,40,50", a_out;
  ab->add_option("--ckpt", a_ckpt, "dropout-trained checkpoint")->required();
  ab->add_option("--no-dropout-ckpt", a_nd_ckpt, "baseline checkpoint trained without dropout");
  ab->add_option("--data", a_data, "dataset directory")->required();
  ab->add_option("--samples", a_samples, "comma-separated T values");
  ab->add_option("--out", a_out, "output directory")->required();

  // infer
  auto* in = app.add_subcommand("infer", "run MC prediction on one image");
  std::string i_ckpt, i_image, i_meta, i_out;
  int i_samples = 50;
  in->add_option("--ckpt", i_ckpt, "checkpoint file")->required();
  in->add_option("--image", i_image, "input image (.ten)")->required();
  in->add_option("--meta", i_meta, "ANGLE,GSD metadata")->required();
  in->add_option("--mc-samples", i_samples, "Monte Carlo samples")->check(CLI::PositiveNumber);
  in->add_option("--out", i_out, "output prefix")->required();

  // export-acm
  auto* ex = app.add_subcommand("export-acm", "export modulation product maps");
  std::string x_ckpt, x_image, x_meta, x_out;
  ex->add_option("--ckpt", x_ckpt, "metaacm checkpoint")->required();
  ex->add_option("--image", x_image, "input image (.ten)")->required();
  ex->add_option("--meta", x_meta, "ANGLE,GSD metadata")->required();
  ex->add_option("--out", x_out, "output prefix")->required();

  std::vector<const char*> argv;
  argv.push_back("offnadir");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    blas_single_thread();
    set_threads(threads);
    bool paper = preset == "paper";

    if (gen->parsed()) {
      if (paper && !g_size_opt->count()) g_size = 256;
      GenConfig cfg;
      cfg.num_scenes = g_scenes;
      cfg.angles = g_angles.empty() ? default_angles() : parse_double_list(g_angles);
      cfg.image_size = g_size;
      cfg.seed = g_seed;
      generate_dataset(cfg, g_out);
      write_run_meta(std::filesystem::path(g_out) / "run.meta", "gen-data",
                     {{"scenes", std::to_string(g_scenes)},
                      {"angles", join_doubles(cfg.angles)},
                      {"size", std::to_string(g_size)},
                      {"seed", std::to_string(g_seed)},
                      {"out", g_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    } else if (tr->parsed()) {
      if (paper) {
        if (!t_size_opt->count()) t_size = 256;
        if (!t_batch_opt->count()) t_batch = 64;
        if (!t_iters_opt->count()) t_iters = 1000000;
      }
      ModelConfig mc;
      mc.uncertainty = parse_uncertainty(t_unc);
      mc.injection = parse_injection(t_inj);
      mc.input_size = t_size;
      TrainConfig tc;
      tc.iterations = t_iters;
      tc.batch_size = t_batch;
      tc.seed = t_seed;
      Manifest man = read_manifest(t_data);
      train(mc, tc, man, t_out);
      write_run_meta(std::filesystem::path(t_out) / "run.meta", "train",
                     {{"data", t_data},
                      {"uncertainty", t_unc},
                      {"inject", t_inj},
                      {"iters", std::to_string(t_iters)},
                      {"batch", std::to_string(t_batch)},
                      {"size", std::to_string(t_size)},
                      {"seed", std::to_string(t_seed)},
                      {"lr0", "0.0001"},
                      {"weight_decay", "0.0001"},
                      {"out", t_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    } else if (ev->parsed()) {
      Checkpoint ckpt = load_checkpoint(e_ckpt);
      Manifest man = read_manifest(e_data);
      McConfig mc;
      mc.num_samples = e_samples;
      mc.seed = 0;
      EvalReport rep = evaluate(ckpt, man, parse_split(e_split), mc, e_corr == "on");
      std::filesystem::create_directories(e_out);
      write_report(std::filesystem::path(e_out) / "report.tsv", rep);
      write_run_meta(std::filesystem::path(e_out) / "run.meta", "eval",
                     {{"ckpt", e_ckpt},
                      {"data", e_data},
                      {"split", e_split},
                      {"mc_samples", std::to_string(e_samples)},
                      {"corrected_labels", e_corr},
                      {"out", e_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    } else if (ab->parsed()) {
      Checkpoint ckpt = load_checkpoint(a_ckpt);
      AblateBaselines bl;
      bl.regular_dropout = true;
      Checkpoint nd;
      if (!a_nd_ckpt.empty()) {
        nd = load_checkpoint(a_nd_ckpt);
        bl.no_dropout = true;
        bl.no_dropout_ckpt = &nd;
      }
      Manifest man = read_manifest(a_data);
      McConfig mc;
      mc.seed = 0;
      std::vector<AblationRow> rows =
          ablate_mc_samples(ckpt, man, Split::val, parse_int_list(a_samples), bl, mc);
      std::filesystem::create_directories(a_out);
      write_ablation_csv(std::filesystem::path(a_out) / "mc_curve.csv", rows);
      write_run_meta(std::filesystem::path(a_out) / "run.meta", "ablate-mc",
                     {{"ckpt", a_ckpt},
                      {"no_dropout_ckpt", a_nd_ckpt.empty() ? "-" : a_nd_ckpt},
                      {"data", a_data},
                      {"samples", a_samples},
                      {"split", "val"},
                      {"out", a_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    } else if (in->parsed()) {
      Checkpoint ckpt = load_checkpoint(i_ckpt);
      Tensor img = read_tensor_f32(i_image);
      auto [ang, gsd] = parse_meta_pair(i_meta);
      bool need_meta = ckpt.model.config.injection != InjectionMode::none;
      Tensor meta;
      if (need_meta) {
        Tensor m = normalize_metadata(ang, gsd, ckpt.stats);
        meta = Tensor({1, 2});
        meta[0] = m[0];
        meta[1] = m[1];
      }
      McConfig mc;
      mc.num_samples = i_samples;
      mc.seed = 0;
      PredictionResult pr = mc_predict(ckpt.model, img, need_meta ? &meta : nullptr, mc,
                                       ckpt.model.config.has_dropout_layers());
      export_uncertainty_maps(pr, i_out);
      write_run_meta(i_out + "_run.meta", "infer",
                     {{"ckpt", i_ckpt},
                      {"image", i_image},
                      {"meta", i_meta},
                      {"mc_samples", std::to_string(i_samples)},
                      {"out", i_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    } else if (ex->parsed()) {
      Checkpoint ckpt = load_checkpoint(x_ckpt);
      if (ckpt.model.config.injection != InjectionMode::metaacm)
        throw std::runtime_error("export-acm requires a metaacm checkpoint");
      Tensor img = read_tensor_f32(x_image);
      auto [ang, gsd] = parse_meta_pair(x_meta);
      Tensor m = normalize_metadata(ang, gsd, ckpt.stats);
      Tensor meta({1, 2});
      meta[0] = m[0];
      meta[1] = m[1];
      Tensor batch({1, img.dim(0), img.dim(1), img.dim(2)});
      std::memcpy(batch.data(), img.data(), sizeof(float) * img.size());
      Tape<float> tape(false);
      Rng rng(0);
      ForwardOutput out = ckpt.model.forward(tape, batch, &meta, rng, false, false);
      std::vector<Tensor> products;
      for (const auto& p : out.acm_products) {
        const Tensor& v = p.val();  // [1,C,h,w]
        Tensor t({v.dim(1), v.dim(2), v.dim(3)});
        std::memcpy(t.data(), v.data(), sizeof(float) * v.size());
        products.push_back(std::move(t));
      }
      export_acm_maps(products, img, x_out, 0.5);
      write_run_meta(x_out + "_run.meta", "export-acm",
                     {{"ckpt", x_ckpt},
                      {"image", x_image},
                      {"meta", x_meta},
                      {"threshold", "0.5"},
                      {"out", x_out},
                      {"threads", std::to_string(thread_count())},
                      {"preset", paper ? "paper" : "-"}});
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace offnadir
