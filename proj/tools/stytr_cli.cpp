// stytr: train, stylize, content-leak rounds, PE comparison and self-checks.
//
// Exit codes: 0 success, 1 verification failure, 2 usage/config/data error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "stytr/pe_compare.hpp"
#include "stytr/stytr.hpp"

namespace fs = std::filesystem;
using namespace stytr;

namespace {

constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;

ImageBuffer load_input(const fs::path& path, std::size_t patch, bool crop_to_multiple) {
  auto img = read_ppm(path);
  if (crop_to_multiple) img = center_crop_to_multiple(img, patch);
  require_divisible(img.height, img.width, patch);
  return img;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& s) {
  const auto x = s.find_first_of("xX");
  if (x == std::string::npos) throw ConfigError("grid '" + s + "' is not HxW");
  const auto h = parse_count("grid", s.substr(0, x));
  const auto w = parse_count("grid", s.substr(x + 1));
  return {h, w};
}

struct TrainArgs {
  std::string config, content, style, out, csv;
  std::vector<std::string> overrides;
  std::optional<std::size_t> iters, ckpt_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> clip_norm;
  bool raw_norms = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  auto rc = RunConfig::load(a.config);
  std::vector<std::string> overrides = a.overrides;
  if (a.iters) overrides.push_back("iters=" + std::to_string(*a.iters));
  if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
  if (a.ckpt_every) overrides.push_back("ckpt_every=" + std::to_string(*a.ckpt_every));
  if (a.clip_norm) overrides.push_back("clip_norm=" + format_real(*a.clip_norm));
  if (a.raw_norms) overrides.push_back("raw_norms=true");
  rc.apply_overrides(overrides);

  auto contents = load_image_dir(a.content);
  auto styles = load_image_dir(a.style);
  TrainingSession<float> session(rc, std::move(contents), std::move(styles));

  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path csv_path = a.csv.empty() ? fs::path(out).replace_extension(".csv") : fs::path(a.csv);
  std::ofstream csv(csv_path);
  if (!csv) throw DataError("cannot write loss trace " + csv_path.string());
  csv << csv_header() << '\n';

  const auto& t = rc.train;
  for (std::size_t i = 0; i < t.iters; ++i) {
    const auto row = session.step();
    csv << csv_row(row) << '\n';
    csv.flush();
    if (!a.quiet && (row.step == 1 || row.step % 50 == 0 || row.step == t.iters)) {
      std::printf("step %zu  total %.6f  L_c %.6f  L_s %.6f  L_id1 %.6f  L_id2 %.6f  lr %.3g\n",
                  row.step, row.loss.total, row.loss.content, row.loss.style, row.loss.identity1,
                  row.loss.identity2, row.lr);
    }
    if (t.ckpt_every != 0 && row.step % t.ckpt_every == 0 && row.step != t.iters) {
      session.save(checkpoint_path(out, row.step));
    }
  }
  session.save(out);
  if (!a.quiet) std::printf("wrote %s and %s\n", out.string().c_str(), csv_path.string().c_str());
  return 0;
}

struct StylizeArgs {
  std::string weights, content, style, out, pe;
  bool crop_to_multiple = false;
};

int cmd_stylize(const StylizeArgs& a) {
  const auto model = load_weights<float>(a.weights);
  StylizeOptions opts;
  if (!a.pe.empty()) opts.pe_content = parse_pe_mode(a.pe);
  const auto content = load_input(a.content, model.config.patch, a.crop_to_multiple);
  const auto style = load_input(a.style, model.config.patch, a.crop_to_multiple);
  write_ppm(model.stylize(content, style, opts), a.out);
  return 0;
}

struct RoundsArgs {
  std::string weights, content, style, out;
  std::size_t n = 20;
  bool crop_to_multiple = false;
};

// I_o^0 = I_c; I_o^i = G(I_o^{i-1}, I_s). Each round consumes the
// previous round's written (8-bit) image.
int cmd_rounds(const RoundsArgs& a) {
  const auto model = load_weights<float>(a.weights);
  const auto content = load_input(a.content, model.config.patch, a.crop_to_multiple);
  const auto style = load_input(a.style, model.config.patch, a.crop_to_multiple);
  fs::create_directories(a.out);
  ImageBuffer current = content;
  for (std::size_t i = 1; i <= a.n; ++i) {
    current = quantized(model.stylize(current, style));
    char name[32];
    std::snprintf(name, sizeof name, "round_%02zu.ppm", i);
    write_ppm(current, fs::path(a.out) / name);
  }
  std::printf("wrote %zu rounds to %s\n", a.n, a.out.c_str());
  return 0;
}

struct PeCompareArgs {
  std::string grid, out, weights;
  std::size_t channels = 512, cape_grid = 18;
  std::uint64_t seed = 0;
};

int cmd_pe_compare(const PeCompareArgs& a) {
  const auto [gh, gw] = parse_grid(a.grid);
  PeCompareWeights w;
  if (!a.weights.empty()) {
    const auto model = load_weights<double>(a.weights);
    w.embed_weight = model.params.at("embed.weight").detach();
    w.embed_bias = model.params.at("embed.bias").detach();
    w.cape_weight = model.params.at("cape.weight").detach();
    w.cape_bias = model.params.at("cape.bias").detach();
    w.cape_grid = model.config.cape_grid;
  } else {
    w = PeCompareWeights::random(a.channels, a.cape_grid, a.seed);
  }
  const auto cmp = pe_compare(gh, gw, w);
  for (const auto& p : write_pe_comparison(cmp, a.out)) std::printf("wrote %s\n", p.c_str());
  std::printf("tokens %zu  channels %zu  sinusoidal diagonal %.12g  max |PE dot - closed form| %.3g\n",
              cmp.tokens(), cmp.channels, cmp.sinusoidal_dot[0], cmp.max_closed_form_error());
  return 0;
}

int cmd_check(const std::string& weights) {
  std::optional<fs::path> w;
  if (!weights.empty()) w = fs::path(weights);
  bool all = true;
  for (const auto& r : run_all_checks(w)) {
    std::printf("%-24s %s  max_error=%.3e  %s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.max_error, r.detail.c_str());
    all = all && r.passed;
  }
  std::printf("%s\n", all ? "all suites passed" : "some suites FAILED");
  return all ? 0 : kExitVerify;
}

int cmd_samples(const std::string& out, std::size_t size) {
  fs::create_directories(out);
  write_ppm(sample_content(size, size), fs::path(out) / "content.ppm");
  write_ppm(sample_style(size, size), fs::path(out) / "style.ppm");
  return 0;
}

int cmd_init(const std::string& config, const std::vector<std::string>& overrides,
             std::uint64_t seed, const std::string& out) {
  auto rc = RunConfig::load(config);
  rc.apply_overrides(overrides);
  save_weights(out, init_params<float>(rc.model, seed), rc.model);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style transfer transformer: training, inference and verification"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train a model on content/style image directories");
  tr->add_option("--config", train.config, "key=value run configuration")->required();
  tr->add_option("--content", train.content, "directory of content .ppm images")->required();
  tr->add_option("--style", train.style, "directory of style .ppm images")->required();
  tr->add_option("--out", train.out, "final checkpoint path")->required();
  tr->add_option("--csv", train.csv, "loss trace path (default: checkpoint with .csv)");
  tr->add_option("--set", train.overrides, "override a config key (key=value)");
  tr->add_option("--iters", train.iters, "optimizer steps");
  tr->add_option("--seed", train.seed, "seed for init and sampling");
  tr->add_option("--ckpt-every", train.ckpt_every, "checkpoint interval in steps (0: final only)");
  tr->add_option("--clip-norm", train.clip_norm, "global gradient-norm clip (0: off)");
  tr->add_flag("--raw-norms", train.raw_norms, "unnormalized Euclidean distances in the losses");
  tr->add_flag("--quiet", train.quiet, "no progress output");

  StylizeArgs sty;
  auto* st = app.add_subcommand("stylize", "Stylize one content image with one style image");
  st->add_option("--weights", sty.weights)->required();
  st->add_option("--content", sty.content)->required();
  st->add_option("--style", sty.style)->required();
  st->add_option("--out", sty.out)->required();
  st->add_option("--pe", sty.pe, "content positional encoding override")
      ->check(CLI::IsMember({"cape", "sinusoidal", "none"}));
  st->add_flag("--crop-to-multiple", sty.crop_to_multiple,
               "center-crop inputs to a multiple of the patch size");

  RoundsArgs rounds;
  auto* ro = app.add_subcommand("rounds", "Repeated stylization (content-leak harness)");
  ro->add_option("--weights", rounds.weights)->required();
  ro->add_option("--content", rounds.content)->required();
  ro->add_option("--style", rounds.style)->required();
  ro->add_option("--n", rounds.n, "number of rounds")->check(CLI::PositiveNumber);
  ro->add_option("--out", rounds.out, "output directory")->required();
  ro->add_flag("--crop-to-multiple", rounds.crop_to_multiple);

  PeCompareArgs pec;
  auto* pc = app.add_subcommand("pe-compare", "PGM heatmaps of sinusoidal PE and CAPE");
  pc->add_option("--grid", pec.grid, "patch grid HxW")->required();
  pc->add_option("--out", pec.out, "output directory")->required();
  pc->add_option("--weights", pec.weights, "take embedding and CAPE weights from a model");
  pc->add_option("--channels", pec.channels, "channels when no weights are given")
      ->check(CLI::PositiveNumber);
  pc->add_option("--cape-grid", pec.cape_grid, "pooled grid size when no weights are given")
      ->check(CLI::PositiveNumber);
  pc->add_option("--seed", pec.seed);

  std::string check_weights;
  auto* ck = app.add_subcommand("check", "Run the verification suites");
  ck->add_option("--weights", check_weights, "also verify this weight file");

  std::string samples_out;
  std::size_t samples_size = 32;
  auto* sa = app.add_subcommand("samples", "Write the bundled synthetic content/style pair");
  sa->add_option("--out", samples_out, "output directory")->required();
  sa->add_option("--size", samples_size)->check(CLI::PositiveNumber);

  std::string init_config, init_out;
  std::vector<std::string> init_overrides;
  std::uint64_t init_seed = 0;
  auto* in = app.add_subcommand("init", "Write a freshly initialized weight file");
  in->add_option("--config", init_config)->required();
  in->add_option("--out", init_out)->required();
  in->add_option("--set", init_overrides);
  in->add_option("--seed", init_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*tr) return cmd_train(train);
    if (*st) return cmd_stylize(sty);
    if (*ro) return cmd_rounds(rounds);
    if (*pc) return cmd_pe_compare(pec);
    if (*ck) return cmd_check(check_weights);
    if (*sa) return cmd_samples(samples_out, samples_size);
    if (*in) return cmd_init(init_config, init_overrides, init_seed, init_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
