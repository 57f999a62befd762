// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "vmseg/checkpoint.hpp"
#include "vmseg/dataio.hpp"
#include "vmseg/training.hpp"

using namespace vmseg;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(VMSEG_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  RunResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe))
    res.output += buf.data();
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("vmseg_cli_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

fs::path write_small_config(const fs::path& dir) {
  const fs::path p = dir / "config.txt";
  std::ofstream out(p);
  out << "d_app = 4\nd_h = 4\nstride = 2\nd_mid_app = 4\nd_mid_mot = 4\n"
      << "gen_width = 32\ngen_height = 32\ngen_frames = 12\n";
  return p;
}

fs::path small_checkpoint(const fs::path& dir) {
  ModelConfig cfg;
  cfg.d_app = 4;
  cfg.d_h = 4;
  cfg.stride = 2;
  cfg.d_mid_app = 4;
  cfg.d_mid_mot = 4;
  auto m = make_model<float>(cfg);
  std::mt19937 rng(5);
  init_model(m, rng);
  const fs::path p = dir / "model.ckpt";
  save_checkpoint(p, m);
  return p;
}

}  // namespace

TEST_CASE("gen-data is deterministic for a fixed seed") {
  auto d1 = temp_dir("gen1");
  auto d2 = temp_dir("gen2");
  auto cfg = write_small_config(d1);
  auto r1 = run_cli("gen-data --out " + (d1 / "data").string() + " --count 2 --seed 11 --config " + cfg.string());
  auto r2 = run_cli("gen-data --out " + (d2 / "data").string() + " --count 2 --seed 11 --config " + cfg.string());
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(read_file(d1 / "data" / "manifest.txt") == read_file(d2 / "data" / "manifest.txt"));
  CHECK(read_file(d1 / "data" / "seq_0000" / "frame_00000.ppm") ==
        read_file(d2 / "data" / "seq_0000" / "frame_00000.ppm"));
  CHECK(read_file(d1 / "data" / "seq_0001" / "flow_00003.flo") ==
        read_file(d2 / "data" / "seq_0001" / "flow_00003.flo"));
  // a different seed changes the content
  auto r3 = run_cli("gen-data --out " + (d1 / "other").string() + " --count 2 --seed 12 --config " + cfg.string());
  REQUIRE(r3.exit_code == 0);
  CHECK(read_file(d1 / "data" / "seq_0000" / "frame_00000.ppm") !=
        read_file(d1 / "other" / "seq_0000" / "frame_00000.ppm"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("gen-data with count 0 writes an empty manifest and exits cleanly") {
  auto dir = temp_dir("gen0");
  auto r = run_cli("gen-data --out " + (dir / "data").string() + " --count 0");
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(dir / "data" / "manifest.txt"));
  CHECK(read_file(dir / "data" / "manifest.txt").empty());
  fs::remove_all(dir);
}

TEST_CASE("eval of a prediction equal to ground truth scores 1.0") {
  auto dir = temp_dir("eval");
  auto cfg = write_small_config(dir);
  auto r = run_cli("gen-data --out " + (dir / "data").string() + " --count 1 --seed 3 --config " + cfg.string());
  REQUIRE(r.exit_code == 0);
  const fs::path seq = dir / "data" / "seq_0000";
  // use the ground-truth masks themselves as the prediction
  auto ev = run_cli("eval --pred " + seq.string() + " --gt " + seq.string() +
                    " --report " + (dir / "report.txt").string());
  REQUIRE(ev.exit_code == 0);
  CHECK(ev.output.find("J(mean)      1.0000") != std::string::npos);
  CHECK(ev.output.find("F(mean)      1.0000") != std::string::npos);
  const std::string report = read_file(dir / "report.txt");
  CHECK(report.find("j_mean=1") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("infer writes one mask per frame and is reproducible") {
  auto dir = temp_dir("infer");
  auto cfg = write_small_config(dir);
  auto gen = run_cli("gen-data --out " + (dir / "data").string() + " --count 1 --seed 4 --config " + cfg.string());
  REQUIRE(gen.exit_code == 0);
  const fs::path seq = dir / "data" / "seq_0000";
  const fs::path ckpt = small_checkpoint(dir);

  auto r1 = run_cli("infer --ckpt " + ckpt.string() + " --seq " + seq.string() +
                    " --out " + (dir / "p1").string() + " --window 8 --step 4");
  REQUIRE(r1.exit_code == 0);
  for (int t = 0; t < 12; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%05d.pgm", t);
    CHECK(fs::exists(dir / "p1" / name));
  }
  // masks are written at the full frame grid
  auto m = read_pgm(dir / "p1" / "mask_00000.pgm");
  CHECK(m.shape() == std::vector<int>{1, 32, 32});

  auto r2 = run_cli("infer --ckpt " + ckpt.string() + " --seq " + seq.string() +
                    " --out " + (dir / "p2").string() + " --window 8 --step 4");
  REQUIRE(r2.exit_code == 0);
  for (int t = 0; t < 12; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%05d.pgm", t);
    CHECK(read_file(dir / "p1" / name) == read_file(dir / "p2" / name));
  }
  fs::remove_all(dir);
}

TEST_CASE("infer with a window covering the video equals a single pass") {
  auto dir = temp_dir("degen");
  auto cfg = write_small_config(dir);
  run_cli("gen-data --out " + (dir / "data").string() + " --count 1 --seed 6 --config " + cfg.string());
  const fs::path seq = dir / "data" / "seq_0000";
  const fs::path ckpt = small_checkpoint(dir);

  // window larger than the video, and much larger still: both must degenerate
  // to the same single full pass, byte for byte.
  auto r1 = run_cli("infer --ckpt " + ckpt.string() + " --seq " + seq.string() +
                    " --out " + (dir / "w12").string() + " --window 12 --step 4");
  auto r2 = run_cli("infer --ckpt " + ckpt.string() + " --seq " + seq.string() +
                    " --out " + (dir / "w500").string() + " --window 500 --step 50");
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  for (int t = 0; t < 12; ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%05d.pgm", t);
    CHECK(read_file(dir / "w12" / name) == read_file(dir / "w500" / name));
  }
  fs::remove_all(dir);
}

TEST_CASE("infer --record-gates emits gate record files usable by vis-gates") {
  auto dir = temp_dir("gates");
  auto cfg = write_small_config(dir);
  run_cli("gen-data --out " + (dir / "data").string() + " --count 1 --seed 7 --config " + cfg.string());
  const fs::path seq = dir / "data" / "seq_0000";
  const fs::path ckpt = small_checkpoint(dir);

  auto r = run_cli("infer --ckpt " + ckpt.string() + " --seq " + seq.string() +
                   " --out " + (dir / "pred").string() + " --record-gates");
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(dir / "pred" / "gates_fwd.bin"));
  REQUIRE(fs::exists(dir / "pred" / "gates_bwd.bin"));

  auto vg = run_cli("vis-gates --records " + (dir / "pred" / "gates_fwd.bin").string() +
                    " --channels 0,2 --out " + (dir / "heat").string());
  REQUIRE(vg.exit_code == 0);
  CHECK(fs::exists(dir / "heat" / "gate_r_c0_t0.pgm"));
  CHECK(fs::exists(dir / "heat" / "gate_invz_c2_t11.pgm"));
  fs::remove_all(dir);
}

TEST_CASE("bad invocations exit nonzero with an error message") {
  auto miss = run_cli("infer --ckpt /no/such.ckpt --seq /no/seq --out /tmp/vmseg_x");
  CHECK(miss.exit_code == 1);
  CHECK(miss.output.find("error:") != std::string::npos);

  auto unknown = run_cli("frobnicate");
  CHECK(unknown.exit_code != 0);

  auto badvariant = run_cli("ablate --variant nonsense --audit");
  CHECK(badvariant.exit_code != 0);
}

TEST_CASE("ablate --audit reports the parameter matching") {
  auto dir = temp_dir("audit");
  auto cfg = write_small_config(dir);
  auto r = run_cli("ablate --variant no-memory --audit --config " + cfg.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("gru+fuse params=") != std::string::npos);
  CHECK(r.output.find("conv-stack params=") != std::string::npos);
  CHECK(r.output.find("width=") != std::string::npos);
  fs::remove_all(dir);
}
