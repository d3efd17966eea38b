#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "molspin/cli.hpp"
#include "molspin/config.hpp"
#include "molspin/io.hpp"
#include "molspin/photon_stats.hpp"

using namespace molspin;
using cfg::Config;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(MOLSPIN_SOURCE_DIR) / "configs";

cfg::EnvLookup no_env() {
  return [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
}

cfg::EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    const auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("molspin_cli_" + std::to_string(getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.cfg";
  io::write_file_atomic(p, text);
  return p;
}

const char* kMinimal = R"(
[zfs]
ground_d_mhz = 11159.7
ground_e_mhz = -540.9
)";

struct Invocation {
  int code = 0;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "molspin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Invocation r;
  r.code = cli::main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::vector<double>> read_csv(const fs::path& p) {
  std::istringstream in(io::read_file(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("config values, comments and types") {
  const auto c = Config::from_string(R"(
; comment
[Zfs]
Ground_D_MHz = 11159.7   ; inline comment
flag = yes
n = 1e7
list = 1, 2.5 ,3
name = both
)",
                                     no_env());
  CHECK(c.get_double("zfs", "ground_d_mhz") == 11159.7);
  CHECK(c.get_bool("zfs", "flag"));
  CHECK(c.get_long("zfs", "n") == 10000000);
  CHECK(c.get_list("zfs", "list") == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(c.get_string("zfs", "name") == "both");
  CHECK(c.get_double("zfs", "absent", 4.0) == 4.0);
  CHECK(c.effective().at("zfs.absent") == "4");
  CHECK_THROWS_AS(c.get_bool("zfs", "name"), cfg::BadValue);
  CHECK_THROWS_AS(c.get_double("zfs", "name"), cfg::BadValue);
  CHECK_THROWS_AS(c.get_long("zfs", "ground_d_mhz"), cfg::BadValue);
  CHECK_THROWS_AS(c.get_u64("zfs", "ground_d_mhz"), cfg::BadValue);
  CHECK_THROWS_AS(Config::from_string("orphan = 1\n", no_env()), cfg::BadValue);
  CHECK_THROWS_AS(Config::from_string("[a]\nk = 1\nk = 2\n", no_env()), cfg::BadValue);
  CHECK_THROWS_AS(Config::from_file("/nonexistent/x.cfg", no_env()), InvalidArgument);
}

TEST_CASE("missing required key names the key") {
  const auto c = Config::from_string("[zfs]\nground_e_mhz = -540.9\n", no_env());
  try {
    cli::load_model(c);
    FAIL("expected MissingKey");
  } catch (const cfg::MissingKey& e) {
    CHECK(e.section() == "zfs");
    CHECK(e.key() == "ground_d_mhz");
    CHECK(std::string(e.what()).find("ground_d_mhz") != std::string::npos);
  }
}

TEST_CASE("environment overrides any key") {
  CHECK(cfg::env_name("g2_fit", "tau0-ns") == "MOLSPIN_G2_FIT_TAU0_NS");
  const auto c = Config::from_string(kMinimal, fake_env({{"MOLSPIN_ZFS_GROUND_D_MHZ", " 11186.0 "},
                                                         {"MOLSPIN_ODMR_RABI_KHZ", "20"}}));
  CHECK(c.get_double("zfs", "ground_d_mhz") == 11186.0);
  CHECK(c.get_double("odmr", "rabi_khz", 40.0) == 20.0);
  // A required key can come from the environment alone.
  const auto d = Config::from_string("[zfs]\nground_e_mhz = -1\n", fake_env({{"MOLSPIN_ZFS_GROUND_D_MHZ", "100"}}));
  CHECK(d.get_double("zfs", "ground_d_mhz") == 100.0);
  const auto bad = Config::from_string(kMinimal, fake_env({{"MOLSPIN_ZFS_GROUND_E_MHZ", "oops"}}));
  CHECK_THROWS_AS(bad.get_double("zfs", "ground_e_mhz"), cfg::BadValue);
}

TEST_CASE("config hash is over the canonical effective values") {
  auto hash_of = [](const std::string& text) {
    const auto c = Config::from_string(text, no_env());
    cli::load_model(c);
    return c.hash();
  };
  const auto h0 = hash_of(kMinimal);
  CHECK(h0 == hash_of(kMinimal));
  // Formatting, comments, order and explicit defaults do not matter.
  CHECK(h0 == hash_of("; x\n[zfs]\nground_e_mhz=-540.90\n\n  ground_d_mhz = 1.11597e4 ; y\n"));
  CHECK(h0 == hash_of(std::string(kMinimal) + "[optics]\ndxy_mhz = 1555\n"));
  CHECK(h0 != hash_of("[zfs]\nground_d_mhz = 11159.8\nground_e_mhz = -540.9\n"));
  CHECK(cfg::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(cfg::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("shipped configs validate") {
  int n = 0;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    if (e.path().extension() != ".cfg") continue;
    CAPTURE(e.path().string());
    const auto r = cli::validate(Config::from_file(e.path(), no_env()));
    for (const auto& v : r.violations) MESSAGE(v);
    CHECK(r.ok());
    CHECK(!r.effective.empty());
    ++n;
  }
  CHECK(n >= 4);
}

TEST_CASE("validate reports every violation at once") {
  const auto c = Config::from_string(R"(
[zfs]
ground_d_mhz = 1000
ground_e_mhz = -400
[rates]
isc_rel_x = 0.2
isc_rel_y = 0.2
isc_rel_z = 0.2
[optics]
collection_efficiency = 0
[odmr]
points = 2
spelling_mistake_mhz = 3
)",
                                     no_env());
  const auto r = cli::validate(c);
  auto has = [&](const std::string& needle) {
    for (const auto& v : r.violations)
      if (v.find(needle) != std::string::npos) return true;
    return false;
  };
  CHECK(has("convention"));
  CHECK(has("normalization: isc_rel"));
  CHECK(has("collection_efficiency"));
  CHECK(has("[odmr] points"));
  CHECK(has("unknown key odmr.spelling_mistake_mhz"));
  // Defaults show up in the effective set.
  bool saw_default = false;
  for (const auto& line : r.effective) saw_default |= line == "optics.dxz_mhz = 16120";
  CHECK(saw_default);
}

TEST_CASE("exit codes") {
  const auto dir = scratch("codes");
  const auto h = invoke({"--help"});
  CHECK(h.code == cli::kOk);
  CHECK(h.out.find("odmr.csv: mw_mhz,counts_per_s") != std::string::npos);
  CHECK(h.out.find("MOLSPIN_") != std::string::npos);

  CHECK(invoke({"bogus", "--config", (kConfigs / "site1.cfg").string(), "--out", dir.string()}).code == cli::kUsage);
  CHECK(invoke({"odmr", "--config", (kConfigs / "site1.cfg").string()}).code == cli::kUsage);

  const auto missing = write_config(dir, "[zfs]\nground_e_mhz = -540.9\n");
  const auto m = invoke({"odmr", "--config", missing.string(), "--out", (dir / "o").string()});
  CHECK(m.code == 2);
  CHECK(m.err.find("ground_d_mhz") != std::string::npos);

  const auto bad = write_config(dir, "[zfs]\nground_d_mhz = 100\nground_e_mhz = -50\n");
  const auto b = invoke({"odmr", "--config", bad.string(), "--out", (dir / "o").string()});
  CHECK(b.code == cli::kInvalid);
  CHECK(b.err.find("convention") != std::string::npos);
  CHECK(!fs::exists(dir / "o" / "odmr.csv"));
  CHECK(invoke({"validate", "--config", bad.string()}).code == cli::kInvalid);
  CHECK(invoke({"validate", "--config", (kConfigs / "site1.cfg").string()}).code == cli::kOk);

  // Fit recipe without its input: surfaced as an invalid argument.
  const auto fit = write_config(dir, "[g2_fit]\ninput = nothing_here.csv\n");
  CHECK(invoke({"g2-fit", "--config", fit.string(), "--out", (dir / "f").string()}).code == cli::kInvalid);
  fs::remove_all(dir);
}

TEST_CASE("odmr recipe: peaks on the ground transitions, manifest lists existing files") {
  const auto dir = scratch("odmr");
  const auto c = Config::from_file(kConfigs / "default.cfg", no_env());
  const auto m = cli::run_recipe("odmr", c, dir, 3);
  CHECK(m.seed == 3);
  CHECK(m.recipe == "odmr");
  CHECK(m.config_hash == c.hash());
  for (const auto& o : m.outputs) CHECK(fs::exists(dir / o));
  const auto manifest = nlohmann::json::parse(io::read_file(dir / "manifest_odmr.json"));
  CHECK(manifest["outputs"].size() == m.outputs.size());
  CHECK(manifest["config_hash"].get<std::string>().size() == 16);

  const auto rows = read_csv(dir / "odmr.csv");
  REQUIRE(rows.size() == 602);
  // Two windows: the first ZY, the second ZX.
  for (int w = 0; w < 2; ++w) {
    double best = -1, at = 0;
    for (std::size_t i = w * 301; i < (w + 1) * 301u; ++i)
      if (rows[i][1] > best) best = rows[i][1], at = rows[i][0];
    CHECK(at == doctest::Approx(w == 0 ? 10618.8 : 11700.6).epsilon(1e-6));
  }
  const auto rep = nlohmann::json::parse(io::read_file(dir / "odmr_fit.json"));
  CHECK(rep["peaks"][0]["fitted_mhz"].get<double>() == doctest::Approx(10618.8).epsilon(1e-7));
  CHECK(rep["peaks"][1]["fitted_mhz"].get<double>() == doctest::Approx(11700.6).epsilon(1e-7));
  fs::remove_all(dir);
}

TEST_CASE("identical recipe, config and seed give byte-identical CSVs") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto c = Config::from_file(kConfigs / "site1.cfg", no_env());
  for (const char* r : {"tcspc-sim", "rabi", "epr-rotation"}) {
    cli::run_recipe(r, c, a, 11);
    cli::run_recipe(r, c, b, 11);
  }
  for (const char* f : {"tcspc.csv", "rabi.csv", "epr_rotation.csv"}) {
    CAPTURE(f);
    CHECK(io::read_file(a / f) == io::read_file(b / f));
  }
  cli::run_recipe("rabi", c, b, 12);
  CHECK(io::read_file(a / "rabi.csv") != io::read_file(b / "rabi.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("g2-sim then g2-fit recovers the configured values") {
  const auto dir = scratch("g2");
  const auto c = Config::from_string(std::string(kMinimal) + "[g2]\nmax_jumps = 4e6\n[g2_fit]\nn_mc = 200\n", no_env());
  cli::run_recipe("g2-sim", c, dir, 5);
  cli::run_recipe("g2-fit", c, dir, 5);
  const auto rep = nlohmann::json::parse(io::read_file(dir / "g2_fit.json"));
  REQUIRE(rep.contains("comparison"));
  // Each check holds with 68% probability at 1 sigma; 3 sigma keeps the
  // test stable while still catching a broken pipeline.
  for (const char* k : {"g0", "tau_anti_ns", "tau_bunch_ns"}) {
    CAPTURE(k);
    const auto& e = rep["comparison"][k];
    CHECK(std::abs(e["fitted"].get<double>() - e["configured"].get<double>()) <= 3.0 * e["error"].get<double>());
  }
  CHECK(rep["single_emitter"].get<bool>());
  CHECK(rep.contains("g0_mc_interval"));
  const auto h = photon::read_g2_csv(dir / "g2.csv");
  CHECK(h.bin_ns == 5.0);
  CHECK(fs::exists(dir / "photons.bin"));
  fs::remove_all(dir);
}

TEST_CASE("tcspc-sim then tcspc-fit recovers the components") {
  const auto dir = scratch("tcspc");
  const auto c = Config::from_string(std::string(kMinimal) + "[tcspc]\nphotons = 3e5\n", no_env());
  cli::run_recipe("tcspc-sim", c, dir, 2);
  cli::run_recipe("tcspc-fit", c, dir, 2);
  const auto rep = nlohmann::json::parse(io::read_file(dir / "tcspc_fit.json"));
  CHECK(rep["tau1_ns"].get<double>() == doctest::Approx(4.8).epsilon(0.1));
  CHECK(rep["tau2_ns"].get<double>() == doctest::Approx(22.3).epsilon(0.1));
  CHECK(std::abs(rep["a1"].get<double>() - 0.43) < 0.05);
  const auto rows = read_csv(dir / "tcspc_fit_curve.csv");
  REQUIRE(!rows.empty());
  CHECK(rows[0].size() == 5);
  fs::remove_all(dir);
}

TEST_CASE("dw-ratio on synthetic and file input") {
  const auto dir = scratch("dw");
  const auto c = Config::from_string(std::string(kMinimal) + "[dw]\nbackground = 2\n", no_env());
  cli::run_recipe("dw-ratio", c, dir, 0);
  const auto rep = nlohmann::json::parse(io::read_file(dir / "dw.json"));
  CHECK(std::abs(rep["debye_waller"].get<double>() - 0.1947) < 0.005);
  // Feed the written spectrum back as measured input.
  const auto d = Config::from_string(std::string(kMinimal) + "[dw]\ninput = emission.csv\n", no_env());
  cli::run_recipe("dw-ratio", d, dir, 0);
  const auto again = nlohmann::json::parse(io::read_file(dir / "dw.json"));
  CHECK(again["debye_waller"].get<double>() == doctest::Approx(rep["debye_waller"].get<double>()).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("epr-rotation CSV columns") {
  const auto dir = scratch("epr");
  const auto c = Config::from_string(std::string(kMinimal) + "[epr]\npoints = 4\nsite_tilt_deg = 0\n", no_env());
  cli::run_recipe("epr-rotation", c, dir, 0);
  std::istringstream in(io::read_file(dir / "epr_rotation.csv"));
  std::string header, row;
  std::getline(in, header);
  CHECK(header == "angle_deg,site,field_mt,transition_pair");
  int rows = 0;
  std::map<std::string, int> per_site;
  while (std::getline(in, row)) {
    ++rows;
    per_site[row.substr(row.find(',') + 1, 1)]++;
  }
  CHECK(rows > 0);
  // Zero tilt: both sites give the same number of lines.
  CHECK(per_site["1"] == per_site["2"]);
  fs::remove_all(dir);
}

TEST_CASE("isotope-spectrum writes molecules, spectrum and class report") {
  const auto dir = scratch("iso");
  const auto c = Config::from_string(std::string(kMinimal) + "[isotope]\nn_molecules = 300\nn_triples = 0\n", no_env());
  cli::run_recipe("isotope-spectrum", c, dir, 4);
  const auto rep = nlohmann::json::parse(io::read_file(dir / "isotope_fit.json"));
  CHECK(rep["n_molecules"].get<long>() == 300);
  long total = 0;
  for (const auto& k : rep["classes"]) total += k["count"].get<long>();
  CHECK(total == 300);
  CHECK(rep["classes"][0]["probability"].get<double>() == doctest::Approx(0.758).epsilon(1e-3));
  CHECK(read_csv(dir / "isotope_molecules.csv").size() == 300);
  fs::remove_all(dir);
}
