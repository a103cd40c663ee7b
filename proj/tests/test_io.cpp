#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "mingrad/io.hpp"

using namespace mingrad;

namespace fs = std::filesystem;

TEST(Csv, QuotesOnlyWhenNeeded) {
  CsvTable t({"a", "b,c"});
  t.add_row({"plain", "say \"hi\""});
  t.add_row({"two\nlines", ""});
  EXPECT_EQ(t.str(), "a,\"b,c\"\r\nplain,\"say \"\"hi\"\"\"\r\n\"two\nlines\",\r\n");
  EXPECT_EQ(CsvTable::quote("a\rb"), "\"a\rb\"");
}

TEST(Csv, RejectsRowsOfWrongWidth) {
  CsvTable t({"a", "b"});
  EXPECT_THROW(t.add_row({"1"}), InvalidArgument);
  EXPECT_THROW(t.add_row({"1", "2", "3"}), InvalidArgument);
  EXPECT_TRUE(t.rows().empty());
}

TEST(FormatDouble, ShortestRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    const std::string s = format_double(v);
    EXPECT_EQ(std::strtod(s.c_str(), nullptr), v) << s;
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(WriteFileAtomic, CreatesDirectoriesAndReplacesContent) {
  const fs::path dir = fs::temp_directory_path() / "mingrad_io_test";
  fs::remove_all(dir);
  const fs::path file = dir / "sub" / "out.csv";
  write_file_atomic(file, "first");
  write_file_atomic(file, "second\r\n");
  std::ifstream f(file, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_EQ(ss.str(), "second\r\n");
  EXPECT_FALSE(fs::exists(dir / "sub" / "out.csv.tmp"));
  fs::remove_all(dir);
}

TEST(GitBlobHash, MatchesGit) {
  // `git hash-object` of an empty file and of "hello\n"
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(InstanceHash, StableAndSensitive) {
  const std::string h = instance_hash(make_ridge(4, 5, 0.1, 1));
  EXPECT_EQ(h.size(), 40u);
  EXPECT_EQ(h, instance_hash(make_ridge(4, 5, 0.1, 1)));
  EXPECT_NE(h, instance_hash(make_ridge(4, 5, 0.1, 2)));
  EXPECT_NE(h, instance_hash(make_ridge(4, 5, 0.2, 1)));
  EXPECT_NE(h, instance_hash(make_logistic(4, 5, 0.1, 1)));
  EXPECT_NE(instance_hash(make_entropic_ot(4, 3, 0.1, 1)), instance_hash(make_entropic_ot(4, 3, 0.1, 2)));
}

TEST(RunManifest, CarriesRequiredFields) {
  RunManifest m;
  m.experiment = "curve";
  m.command_line = {"mingrad", "curve"};
  m.seed = 3;
  m.outputs = {"curve.csv"};
  m.results["x"] = json_number(std::numeric_limits<double>::quiet_NaN());
  const nlohmann::json j = m.to_json();
  for (const char* key : {"experiment", "command_line", "config", "seed", "code_version", "outputs", "started",
                          "finished", "duration_s", "results"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_FALSE(j.contains("instance_hash"));
  EXPECT_TRUE(j["results"]["x"].is_null());
  EXPECT_EQ(j["code_version"], kVersion);
  EXPECT_EQ(json_number(1.5), 1.5);
}

TEST(UtcTimestamp, Iso8601) {
  EXPECT_TRUE(std::regex_match(utc_timestamp(), std::regex(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z)")));
  EXPECT_EQ(utc_timestamp(std::chrono::system_clock::time_point{}), "1970-01-01T00:00:00Z");
}
