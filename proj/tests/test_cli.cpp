#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fsam/cli.hpp"
#include "fsam/config.hpp"
#include "fsam/image_io.hpp"

using namespace fsam;
namespace fs = std::filesystem;

namespace {

const fs::path kWork = "cli_tmp";

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run fsam_cli(const std::string& args, const std::string& env = {}) {
  fs::create_directories(kWork);
  const fs::path out = kWork / "stdout.txt", err = kWork / "stderr.txt";
  const std::string cmd = env + " " FSAM_BIN " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path dataset() {
  static const fs::path root = [] {
    const fs::path r = kWork / "data";
    fs::remove_all(r);
    const Run run = fsam_cli("synth --out " + r.string() + " --set samples_per_domain=4");
    REQUIRE(run.code == 0);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("config text: types, comments, errors, round trip") {
  const auto entries = parse_config_text("# comment\nlr = 1e-3\nname = \"a # b\"  # tail\nuse_frequency = false\n"
                                         "eval_targets = [\"B\", \"C\"]\ndepth = 3\n");
  REQUIRE(entries.size() == 5);
  CHECK(entries[0].value.kind == ConfigValue::Kind::Real);
  CHECK(entries[1].value.text == "a # b");
  CHECK(entries[2].value.kind == ConfigValue::Kind::Bool);
  CHECK(entries[3].value.items.size() == 2);
  CHECK(entries[4].value.integer == 3);
  CHECK(entries[4].line == 6);

  for (const char* bad : {"x = 1\nx = 2\n", "x 1\n", "x = [1, [2]]\n", "x = \"open\n", "x = nan\n"}) {
    try {
      (void)parse_config_text(bad);
      FAIL("expected invalid-config for ", bad);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
      CHECK(std::string(e.what()).find("line ") != std::string::npos);
    }
  }

  RunConfig cfg = resolve_run_config(parse_config_text("lr = 0.002\ndepth = 3\nsource_domain = \"B\"\n"));
  CHECK(cfg.model.lr == 0.002);
  CHECK(cfg.model.vit.depth == 3);
  const RunConfig again = resolve_run_config(parse_config_text(render_config(cfg)));
  CHECK(render_config(again) == render_config(cfg));
  CHECK_THROWS_AS(resolve_run_config(parse_config_text("learning_rate = 1\n")), Error);
  CHECK_THROWS_AS(resolve_run_config(parse_config_text("depth = \"two\"\n")), Error);

  const RunConfig riga = resolve_run_config({}, "riga-like");
  CHECK(riga.model.vit.image_size == 512);
  CHECK(riga.model.num_classes == 3);
  CHECK(riga.model.adapter_mid == riga.model.vit.embed_dim / 4);
  CHECK(resolve_run_config({}, "prostate-like").model.warmup_steps == 250);
}

TEST_CASE("output directory precedence") {
  ::unsetenv("FSAM_OUT_DIR");
  CHECK(cli::resolve_out_dir("", "", "train") == fs::path("fsam_out/train"));
  ::setenv("FSAM_OUT_DIR", "/tmp/x", 1);
  CHECK(cli::resolve_out_dir("", "", "train") == fs::path("/tmp/x/train"));
  CHECK(cli::resolve_out_dir("", "cfg", "train") == fs::path("cfg"));
  CHECK(cli::resolve_out_dir("flag", "cfg", "train") == fs::path("flag"));
  ::unsetenv("FSAM_OUT_DIR");
  CHECK(cli::exit_code_for(ErrorKind::InvalidConfig) == 2);
  CHECK(cli::exit_code_for(ErrorKind::Integrity) == 1);
}

TEST_CASE("train: smoke run, resolved defaults, artifacts") {
  const fs::path out = kWork / "train";
  fs::remove_all(out);
  const Run r = fsam_cli("train --data " + dataset().string() + " --out " + out.string() + " --max-epochs 1");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("trained source=A") != std::string::npos);
  for (const char* f : {"resolved_config.txt", "audit.json", "metrics.jsonl", "checkpoint_best.fsam", "checkpoint_last.fsam"})
    CHECK_MESSAGE(fs::exists(out / f), f);

  const RunConfig resolved = resolve_run_config(parse_config_text(slurp(out / "resolved_config.txt")));
  CHECK(resolved.model.lr == 5e-4);
  CHECK(resolved.model.weight_decay == 0.1);
  CHECK(resolved.model.lambda == 0.8);
  CHECK(resolved.model.lora_rank == 4);
  CHECK(resolved.model.max_epochs == 1);

  std::istringstream lines(slurp(out / "metrics.jsonl"));
  std::string line, last;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("loss"));
    CHECK(j.contains("wall_time"));
    last = line;
    ++n;
  }
  CHECK(n >= 1);
  CHECK_FALSE(nlohmann::json::parse(last).at("val_dsc").is_null());

  const auto audit = nlohmann::json::parse(slurp(out / "audit.json"));
  CHECK(audit.at("groups").at("lora") == 768);
}

TEST_CASE("exit codes and diagnostics") {
  CHECK(fsam_cli("--help").code == 0);
  const Run none = fsam_cli("");
  CHECK(none.code == 2);
  const Run bad_flag = fsam_cli("train --bogus 1");
  CHECK(bad_flag.code == 2);
  CHECK(bad_flag.err.find("error: kind=usage") != std::string::npos);
  const Run bad_key = fsam_cli("train --set nonsense=1 --out " + (kWork / "bk").string());
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("kind=invalid-config") != std::string::npos);
  CHECK(fsam_cli("train --data " + (kWork / "missing").string() + " --out " + (kWork / "m").string()).code == 2);
  CHECK(fsam_cli("eval --checkpoint " + (kWork / "none.fsam").string() + " --data " + dataset().string()).code == 2);
  CHECK(fsam_cli("inspect spectrum --image " + (kWork / "none.png").string()).code == 2);

  const fs::path ck = kWork / "train" / "checkpoint_best.fsam";
  REQUIRE(fs::exists(ck));
  std::string bytes = slurp(ck);
  bytes[bytes.size() / 2] ^= 0x5a;
  const fs::path broken = kWork / "broken.fsam";
  std::ofstream(broken, std::ios::binary) << bytes;
  const Run corrupt = fsam_cli("eval --checkpoint " + broken.string() + " --data " + dataset().string() + " --out " +
                               (kWork / "ev_bad").string());
  CHECK(corrupt.code == 1);
  CHECK(corrupt.err.find("kind=integrity") != std::string::npos);
}

TEST_CASE("eval writes the leave-one-out report") {
  const fs::path ck = kWork / "train" / "checkpoint_best.fsam";
  REQUIRE(fs::exists(ck));
  const fs::path out = kWork / "eval";
  const Run r = fsam_cli("eval --checkpoint " + ck.string() + " --data " + dataset().string() + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("row A average=") != std::string::npos);
  const std::string csv = slurp(out / "report.csv");
  CHECK(csv.rfind("source,A,B,C,average\n", 0) == 0);
  const auto j = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(j.at("rows").size() == 1);
  CHECK(j.at("rows")[0].at("targets").size() == 2);
}

TEST_CASE("synth: idempotent output, unit gains give identical domains") {
  const fs::path a = kWork / "s1", b = kWork / "s2";
  for (const auto& p : {a, b}) {
    fs::remove_all(p);
    REQUIRE(fsam_cli("synth --out " + p.string() + " --set samples_per_domain=2 --seed 4").code == 0);
  }
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    CHECK_MESSAGE(slurp(entry.path()) == slurp(b / fs::relative(entry.path(), a)), entry.path().string());
  }

  const fs::path u = kWork / "unit";
  fs::remove_all(u);
  REQUIRE(fsam_cli("synth --out " + u.string() + " --set num_domains=2 --set 'gains=[1.0, 1.0]' --set 'noise=[0.0, 0.0]' "
                   "--set samples_per_domain=2").code == 0);
  for (const char* id : {"s0000", "s0001"}) {
    CHECK(slurp(u / "A" / "images" / (std::string(id) + ".png")) == slurp(u / "B" / "images" / (std::string(id) + ".png")));
    CHECK(slurp(u / "A" / "masks" / (std::string(id) + ".png")) == slurp(u / "B" / "masks" / (std::string(id) + ".png")));
  }
}

TEST_CASE("inspect spectrum: constant image has one centered bin") {
  const fs::path img = kWork / "const.png";
  write_image(img, Image(16, 16, 1, 0.5));
  const fs::path out = kWork / "spec";
  const Run r = fsam_cli("inspect spectrum --image " + img.string() + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = nlohmann::json::parse(slurp(out / "spectrum.json"));
  const auto& c = j.at("channels")[0];
  CHECK(c.at("nonzero_bins") == 1);
  CHECK(c.at("bins")[0].at("row") == 8);
  CHECK(c.at("bins")[0].at("col") == 8);
  CHECK(fs::exists(out / "amplitude.png"));
  CHECK(fs::exists(out / "phase.png"));
}

TEST_CASE("inspect prompt and audit") {
  const fs::path ck = kWork / "train" / "checkpoint_best.fsam";
  REQUIRE(fs::exists(ck));
  const fs::path out = kWork / "prompt";
  const fs::path img = dataset() / "B" / "images" / "s0001.png";
  const Run r = fsam_cli("inspect prompt --checkpoint " + ck.string() + " --image " + img.string() + " --out " + out.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto j = nlohmann::json::parse(slurp(out / "prompt.json"));
  CHECK(std::abs(j.at("alpha_sum").get<double>() - 1.0) < 1e-9);
  CHECK(j.at("alpha").size() == 8);
  CHECK(j.at("activation_min").get<double>() >= -1.0);
  CHECK(j.at("activation_max").get<double>() <= 1.0);

  const fs::path aud = kWork / "audit";
  REQUIRE(fsam_cli("inspect audit --checkpoint " + ck.string() + " --out " + aud.string()).code == 0);
  const auto a = nlohmann::json::parse(slurp(aud / "audit.json"));
  CHECK(a.at("groups").at("lora") == 768);
  CHECK(a.at("frozen").get<long long>() + a.at("trainable").get<long long>() > 0);

  const Run fresh = fsam_cli("inspect audit --set use_frequency=false --out " + (kWork / "audit2").string());
  REQUIRE(fresh.code == 0);
  const auto groups = nlohmann::json::parse(slurp(kWork / "audit2" / "audit.json")).at("groups");
  CHECK(groups.value("adapter", 0) == 0);
}

TEST_CASE("FSAM_OUT_DIR supplies the default output root") {
  const fs::path root = fs::absolute(kWork / "envroot");
  fs::remove_all(root);
  const Run r = fsam_cli("synth --set samples_per_domain=1", "FSAM_OUT_DIR=" + root.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(root / "synth" / "A" / "images" / "s0000.png"));
}
