#include <gtest/gtest.h>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>

#include "tsonset/io.hpp"

using namespace tsonset;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tsonset_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path file(const std::string& name, const std::string& content) const {
    const fs::path p = dir_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }

  fs::path dir_;
};

void put_f32(std::ostream& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.put(static_cast<char>((u >> (8 * b)) & 0xff));
}

}  // namespace

TEST_F(IoTest, CsvWithTimeColumnInfersRate) {
  const auto rec = io::read_recording_csv(file("r.csv", "time,a,b\n0,1,2\n0.5,3,4\n1.0,5,6\n"));
  EXPECT_EQ(rec.channel_names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(rec.sample_rate_hz(), 2.0);
  ASSERT_EQ(rec.samples().rows(), 2);
  ASSERT_EQ(rec.samples().cols(), 3);
  EXPECT_DOUBLE_EQ(rec.samples()(1, 2), 6.0);
}

TEST_F(IoTest, CsvWithoutTimeNeedsRate) {
  const auto p = file("r.csv", "a,b\n1,2\n3,4\n");
  EXPECT_THROW(io::read_recording_csv(p), InputError);
  const auto rec = io::read_recording_csv(p, 256.0);
  EXPECT_DOUBLE_EQ(rec.sample_rate_hz(), 256.0);
  EXPECT_DOUBLE_EQ(rec.samples()(0, 1), 3.0);
}

TEST_F(IoTest, MalformedCsvReportsLine) {
  try {
    io::read_recording_csv(file("bad.csv", "a,b\n1,2\n3,x\n"), 1.0);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  try {
    io::read_recording_csv(file("short.csv", "a,b\n1,2\n3\n"), 1.0);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, CsvRoundTrip) {
  Matrix m(2, 5);
  m << 0.1, -2.5, 3e-9, 4, 5, 6, 7, 8, 9, 1e10;
  const Recording rec(m, 4.0, {"x", "y"});
  io::write_recording_csv(dir_ / "rt.csv", rec);
  const auto back = io::read_recording_csv(dir_ / "rt.csv");
  EXPECT_EQ(back.samples(), m);
  EXPECT_DOUBLE_EQ(back.sample_rate_hz(), 4.0);
}

TEST_F(IoTest, BinaryRecording) {
  {
    std::ofstream out(dir_ / "r.bin", std::ios::binary);
    for (float v : {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}) put_f32(out, v);
  }
  file("r.json", R"({"channels": ["a", "b"], "sample_rate_hz": 128})");
  const auto rec = io::read_recording_binary(dir_ / "r.bin", dir_ / "r.json");
  ASSERT_EQ(rec.samples().rows(), 2);
  ASSERT_EQ(rec.samples().cols(), 3);
  EXPECT_DOUBLE_EQ(rec.samples()(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(rec.samples()(1, 2), 6.0);
}

TEST_F(IoTest, TruncatedBinaryReportsByte) {
  {
    std::ofstream out(dir_ / "t.bin", std::ios::binary);
    for (float v : {1.0f, 2.0f, 3.0f}) put_f32(out, v);
    out.put('\0');
  }
  file("t.json", R"({"channels": ["a", "b"], "sample_rate_hz": 128})");
  try {
    io::read_recording_binary(dir_ / "t.bin", dir_ / "t.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 8"), std::string::npos) << e.what();
  }
}

TEST_F(IoTest, LabelsRoundTripAndPermutation) {
  const std::vector<int> labels = {0, 1, 1, 0, 2};
  io::write_labels_csv(dir_ / "l.csv", labels);
  EXPECT_EQ(io::read_labels_csv(dir_ / "l.csv"), labels);
  EXPECT_EQ(io::read_labels_csv(file("p.csv", "epoch_index,label\n1,1\n0,0\n")),
            (std::vector<int>{0, 1}));
  EXPECT_THROW(io::read_labels_csv(file("d.csv", "epoch_index,label\n0,1\n0,0\n")), InputError);
  EXPECT_THROW(io::read_labels_csv(file("h.csv", "idx,label\n0,1\n")), InputError);
  EXPECT_THROW(io::read_labels_csv(dir_ / "missing.csv"), InputError);
}

TEST_F(IoTest, MatrixRoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Matrix m(7, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  io::write_matrix(dir_ / "m", m, "test");
  const Matrix back = io::read_matrix(dir_ / "m");
  EXPECT_EQ(back, m);
  const auto meta = io::read_sidecar(dir_ / "m");
  EXPECT_EQ(meta.at("shape"), (nlohmann::json{7, 3}));
  EXPECT_EQ(meta.at("dtype"), "float64");
  EXPECT_EQ(fs::file_size(io::data_path(dir_ / "m")), 7u * 3u * 8u);
}

TEST_F(IoTest, MatrixLayoutIsRowMajorLittleEndian) {
  Matrix m(2, 2);
  m << 1.0, 2.0, 3.0, 4.0;
  io::write_matrix(dir_ / "m", m, "layout");
  const std::string bytes = slurp(io::data_path(dir_ / "m"));
  ASSERT_EQ(bytes.size(), 32u);
  std::uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
  EXPECT_EQ(std::bit_cast<double>(u), 2.0);
}

TEST_F(IoTest, TensorRoundTripAndRewriteIsIdentical) {
  std::vector<Matrix> slices;
  for (int i = 0; i < 3; ++i) slices.push_back(Matrix::Constant(2, 4, i + 0.25));
  io::write_tensor(dir_ / "t", slices, "tensor");
  const std::string first = slurp(io::data_path(dir_ / "t")) + slurp(io::meta_path(dir_ / "t"));
  const auto back = io::read_tensor(dir_ / "t");
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i], slices[i]);
  io::write_tensor(dir_ / "t", back, "tensor");
  EXPECT_EQ(slurp(io::data_path(dir_ / "t")) + slurp(io::meta_path(dir_ / "t")), first);
}

TEST_F(IoTest, ShortMatrixFileRejected) {
  io::write_matrix(dir_ / "m", Matrix::Ones(3, 3), "m");
  fs::resize_file(io::data_path(dir_ / "m"), 40);
  EXPECT_THROW(io::read_matrix(dir_ / "m"), InputError);
}
