#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "perfstream/cli.hpp"

using namespace perfstream;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "perfstream");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string temp_path(const std::string& name) {
  return (fs::temp_directory_path() / ("perfstream_cli_" + std::to_string(::getpid()) + "_" + name)).string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

}  // namespace

TEST(Cli, RequiresSubcommand) { EXPECT_EQ(run({}).code, exit_config); }

TEST(Cli, InvalidSettingIsConfigError) {
  const Result r = run({"serve", "--alpha", "2"});
  EXPECT_EQ(r.code, exit_config);
  EXPECT_NE(r.err.find("0 <= alpha <= 1"), std::string::npos);
}

TEST(Cli, UnderscoreAliasAccepted) {
  const Result r = run({"serve", "--top_metric", "-3"});
  EXPECT_EQ(r.code, exit_config);
  EXPECT_NE(r.err.find("top_metric"), std::string::npos);
}

TEST(Cli, EnvironmentOverride) {
  ::setenv("PERFSTREAM_K", "0", 1);
  const Result r = run({"serve"});
  ::unsetenv("PERFSTREAM_K");
  EXPECT_EQ(r.code, exit_config);
}

TEST(Cli, BadEndpointIsConfigError) {
  EXPECT_EQ(run({"serve", "--ingest", "tcp://nohost"}).code, exit_config);
  EXPECT_EQ(run({"gen", "--out", "tcp://127.0.0.1:99999"}).code, exit_config);
}

TEST(Cli, MissingIngestFileIsRuntimeError) {
  EXPECT_EQ(run({"serve", "--port", "0", "--ingest", "/nonexistent/stream.ndjson"}).code, exit_runtime);
}

TEST(Cli, GenIsDeterministic) {
  const Result a = run({"gen", "--length", "5", "--interval", "0", "--seed", "9"});
  const Result b = run({"gen", "--length", "5", "--interval", "0", "--seed", "9"});
  const Result c = run({"gen", "--length", "5", "--interval", "0", "--seed", "10"});
  ASSERT_EQ(a.code, exit_ok);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  const auto pre = nlohmann::json::parse(a.out.substr(0, a.out.find('\n')));
  EXPECT_EQ(pre["n"], 128);
  EXPECT_EQ(pre["metrics"].size(), 5u);
}

TEST(Cli, PrintScenarioRoundTrips) {
  const Result r = run({"gen", "--print-scenario", "--length", "42"});
  ASSERT_EQ(r.code, exit_ok);
  const std::string path = temp_path("scenario.json");
  std::ofstream(path) << r.out;
  const Result again = run({"gen", "--scenario", path, "--print-scenario"});
  EXPECT_EQ(again.out, r.out);
  EXPECT_EQ(nlohmann::json::parse(r.out)["length"], 42);
  fs::remove(path);
}

TEST(Cli, InvalidScenarioIsConfigError) {
  const std::string path = temp_path("bad.json");
  std::ofstream(path) << R"({"pes": 0})";
  EXPECT_EQ(run({"gen", "--scenario", path}).code, exit_config);
  std::ofstream(path) << "not json";
  EXPECT_EQ(run({"gen", "--scenario", path}).code, exit_config);
  fs::remove(path);
}

TEST(Cli, ReplayReproducesRecording) {
  const std::string rec = temp_path("rec.ndjson");
  const std::string copy = temp_path("copy.ndjson");
  ASSERT_EQ(run({"gen", "--length", "4", "--interval", "0", "--out", rec}).code, exit_ok);
  ASSERT_EQ(run({"replay", rec, "--speed", "0", "--out", copy}).code, exit_ok);
  EXPECT_EQ(read_lines(rec), read_lines(copy));
  fs::remove(rec);
  fs::remove(copy);
}

TEST(Cli, ServeFromFileUntilEof) {
  const std::string rec = temp_path("serve.ndjson");
  ASSERT_EQ(run({"gen", "--length", "20", "--interval", "0", "--out", rec}).code, exit_ok);
  const Result r = run({"serve", "--port", "0", "--ingest", rec, "--exit-after-eof", "--k", "2"});
  EXPECT_EQ(r.code, exit_ok) << r.err;
  const auto ready = nlohmann::json::parse(r.out.substr(0, r.out.find('\n')));
  EXPECT_GT(ready["ws_port"].get<int>(), 0);
  EXPECT_NE(r.err.find("\"k\":2"), std::string::npos);  // config echo
  const auto pos = r.err.find("summary ");
  ASSERT_NE(pos, std::string::npos);
  const auto summary = nlohmann::json::parse(r.err.substr(pos + 8, r.err.find('\n', pos) - pos - 8));
  EXPECT_EQ(summary["frames"], 20);
  EXPECT_EQ(summary["last_t"], 19);
  EXPECT_EQ(summary["malformed"], 0);
  fs::remove(rec);
}

TEST(Cli, BusyPortIsRuntimeError) {
  boost::asio::io_context ioc;
  tcp::acceptor holder(ioc, {boost::asio::ip::make_address("127.0.0.1"), 0});
  const std::string port = std::to_string(holder.local_endpoint().port());
  const Result r = run({"serve", "--port", port, "--ingest", "/dev/null", "--exit-after-eof"});
  EXPECT_EQ(r.code, exit_runtime);
}

TEST(Cli, QuickBenchReportsChecks) {
  const std::string path = temp_path("bench.json");
  const Result r = run({"bench", "--quick", "--out", path});
  std::ifstream in(path);
  const auto report = nlohmann::json::parse(in);
  for (const char* key : {"config", "machine", "a", "b", "c", "d", "checks", "ok"}) EXPECT_TRUE(report.contains(key));
  EXPECT_EQ(r.code, report["ok"].get<bool>() ? exit_ok : exit_runtime);
  fs::remove(path);
}
