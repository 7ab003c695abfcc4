#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "mmotdc/io.hpp"
#include "test_util.hpp"

using namespace mmotdc;
namespace fs = std::filesystem;
using io::json;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mmotdc_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::strtod(io::format_double(x).c_str(), nullptr), x);
  }
  EXPECT_EQ(io::format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(io::format_double(1.0), "1");
  EXPECT_EQ(io::format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(io::format_double(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(Dump, SeventeenDigitFloatsAndSortedKeys) {
  json j;
  j["b"] = 0.1;
  j["a"] = std::vector<double>{1.0 / 3.0, 2};
  j["c"] = "text";
  const std::string s = io::dump(j, 0);
  EXPECT_EQ(s, "{\"a\":[0.33333333333333331,2],\"b\":0.10000000000000001,\"c\":\"text\"}\n");
  EXPECT_EQ(json::parse(s)["a"][0].get<double>(), 1.0 / 3.0);
}

TEST(Dump, RejectsNonFiniteNumbers) {
  json j;
  j["x"] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(io::dump(j), DomainError);
}

TEST(TensorJson, RoundTripIsBitExact) {
  std::mt19937_64 rng(12);
  const DenseTensor t = mmotdc::testing::random_tensor({2, 3, 4}, rng, -5, 5);
  const DenseTensor back = io::tensor_from_json(json::parse(io::dump(io::tensor_to_json(t))));
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], t[i]);
}

TEST(TensorJson, DataIsRowMajor) {
  const DenseTensor t = io::tensor_from_json(json::parse(R"({"shape":[2,3],"data":[0,1,2,3,4,5]})"));
  EXPECT_EQ(t(0, 2), 2.0);
  EXPECT_EQ(t(1, 0), 3.0);
}

TEST(TensorJson, RejectsMalformedInput) {
  const char* bad[] = {
      R"({"shape":[2,2],"data":[1,2,3]})",        // length mismatch
      R"({"shape":[2,2],"data":[1,2,3,4,5]})",    // length mismatch
      R"({"shape":[2,0],"data":[]})",             // zero extent
      R"({"shape":[2,-1],"data":[1,2]})",         // negative extent
      R"({"shape":[2],"data":[1,"x"]})",          // non-numeric
      R"({"shape":[2],"data":[1,2],"extra":1})",  // unknown key
      R"({"data":[1,2]})",                        // missing shape
      R"([1,2])",                                 // not an object
  };
  for (const char* text : bad) EXPECT_THROW(io::tensor_from_json(json::parse(text)), ConfigError) << text;
}

TEST(MarginalsJson, ParsesAndValidates) {
  const MarginalFamily mu = io::marginals_from_json(json::parse("[[0.5,0.5],[0.25,0.25,0.5]]"));
  EXPECT_EQ(mu.extents(), (Shape{2, 3}));
  EXPECT_THROW(io::marginals_from_json(json::parse("[[0.5,0.6]]")), ConfigError);
  EXPECT_THROW(io::marginals_from_json(json::parse("[[1.5,-0.5]]")), ConfigError);
  EXPECT_THROW(io::marginals_from_json(json::parse("[]")), ConfigError);
  EXPECT_THROW(io::marginals_from_json(json::parse("[[]]")), ConfigError);
  EXPECT_THROW(io::marginals_from_json(json::parse("{\"a\":1}")), ConfigError);
}

TEST(PartitionJson, ParsesContiguousBlocksOnly) {
  const TuplePartition t = io::partition_from_json(json::parse("[[0,1],[2,3]]"));
  EXPECT_EQ(t.num_blocks(), 2u);
  EXPECT_EQ(t.num_axes(), 4u);
  EXPECT_THROW(io::partition_from_json(json::parse("[[0,2],[1,3]]")), ConfigError);
  EXPECT_THROW(io::partition_from_json(json::parse("[[1],[0]]")), ConfigError);
  EXPECT_THROW(io::partition_from_json(json::parse("[[0],[]]")), ConfigError);
  EXPECT_THROW(io::partition_from_json(json::parse("[[0,-1]]")), ConfigError);
}

TEST(DualsJson, RoundTrip) {
  DualPotentials d;
  d.f = {{0.1, -2.0}, {1e-300}};
  const DualPotentials back = io::duals_from_json(json::parse(io::dump(io::duals_to_json(d))));
  EXPECT_EQ(back.f, d.f);
  EXPECT_THROW(io::duals_from_json(json::parse("[[1,\"a\"]]")), ConfigError);
}

TEST_F(TempDir, AtomicWriteCreatesParentsAndLeavesNoTemporary) {
  const fs::path target = dir_ / "nested" / "out.json";
  io::atomic_write(target, "first");
  io::atomic_write(target, "second");
  EXPECT_EQ(slurp(target), "second");
  EXPECT_FALSE(fs::exists(fs::path(target.string() + ".tmp")));
  EXPECT_EQ(std::distance(fs::directory_iterator(target.parent_path()), fs::directory_iterator{}), 1);
}

TEST_F(TempDir, FileReadersReportThePath) {
  const fs::path p = write("bad.json", R"({"shape":[3],"data":[1,2]})");
  try {
    io::read_tensor(p);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
  EXPECT_THROW(io::read_tensor(dir_ / "missing.json"), ConfigError);
  EXPECT_THROW(io::read_marginals(write("m.json", "[[0.5, 0.5")), ConfigError);
}

TEST_F(TempDir, WriteTensorThenReadBack) {
  const DenseTensor t(Shape{2, 2}, {0.1, 0.2, 0.3, 0.4});
  io::write_tensor(dir_ / "t.json", t);
  const DenseTensor back = io::read_tensor(dir_ / "t.json");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back[i], t[i]);
}

TEST(CsvTable, FormatsCellsAndChecksWidth) {
  io::CsvTable table({"name", "x", "n", "flag"});
  table.row() << "a" << 0.1 << 3 << true;
  table.row() << "b" << 2.0 << std::size_t{4} << false;
  EXPECT_EQ(table.str(), "name,x,n,flag\na,0.10000000000000001,3,1\nb,2,4,0\n");
  const json j = table.to_json();
  EXPECT_EQ(j[0]["x"].get<double>(), 0.1);
  EXPECT_EQ(j[1]["n"].get<long long>(), 4);
  EXPECT_EQ(j[0]["name"], "a");
  table.row() << "short";
  EXPECT_THROW(table.str(), std::logic_error);
}
