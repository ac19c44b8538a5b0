#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "ganforge/checkpoint.hpp"
#include "tempdir.hpp"

using namespace ganforge;
using ganforge::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<NamedTensor> sample_tensors() {
  Tensor<float> a({2, 3}, {1.5f, -0.0f, 3.25f, 1e-30f, -7.0f, 0.1f});
  Tensor<float> b({4});
  b[0] = std::numeric_limits<float>::denorm_min();
  b[1] = std::numeric_limits<float>::max();
  b[2] = -1.0f / 3.0f;
  return {{"generator/w", a}, {"adam/generator/w/m", b}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir("ganforge_ckpt");
  const auto tensors = sample_tensors();
  write_checkpoint(dir / "a.ckpt", {{"step", 42}, {"note", "x"}}, tensors);
  CheckpointData ck = read_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.meta["step"], 42);
  EXPECT_EQ(ck.meta["note"], "x");
  ASSERT_EQ(ck.tensors.size(), 2u);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    EXPECT_EQ(ck.tensors[i].name, tensors[i].name);
    EXPECT_EQ(ck.tensors[i].value.shape(), tensors[i].value.shape());
    EXPECT_EQ(std::memcmp(ck.tensors[i].value.ptr(), tensors[i].value.ptr(), tensors[i].value.size() * 4), 0);
  }
  EXPECT_TRUE(ck.has("generator/w"));
  EXPECT_FALSE(ck.has("nope"));
  EXPECT_THROW(ck.tensor("nope"), Error);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
}

TEST(Checkpoint, LayoutIsMagicLengthManifestPayload) {
  TempDir dir("ganforge_ckpt");
  write_checkpoint(dir / "a.ckpt", {{"step", 1}}, sample_tensors());
  const std::string bytes = slurp(dir / "a.ckpt");
  ASSERT_GT(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), std::string("GFCKPT1\n"));
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
  const auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  const auto& entries = manifest.at("tensors");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0]["dtype"], "float32");
  EXPECT_EQ(entries[1]["offset"], 24);
  EXPECT_EQ(bytes.size(), 16 + len + (6 + 4) * 4);
  // First payload float 1.5f = 0x3FC00000, little endian.
  const std::string first = bytes.substr(16 + len, 4);
  EXPECT_EQ(first, std::string("\x00\x00\xc0\x3f", 4));
}

TEST(Checkpoint, OverwriteReplacesAtomically) {
  TempDir dir("ganforge_ckpt");
  write_checkpoint(dir / "a.ckpt", {{"step", 1}}, sample_tensors());
  write_checkpoint(dir / "a.ckpt", {{"step", 2}}, {});
  EXPECT_EQ(read_checkpoint(dir / "a.ckpt").meta["step"], 2);
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles) {
  TempDir dir("ganforge_ckpt");
  EXPECT_THROW(read_checkpoint(dir / "missing.ckpt"), Error);
  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "hello world, not a checkpoint";
  }
  EXPECT_THROW(read_checkpoint(dir / "junk.ckpt"), Error);
  write_checkpoint(dir / "a.ckpt", {{"step", 1}}, sample_tensors());
  const std::string bytes = slurp(dir / "a.ckpt");
  {
    std::ofstream out(dir / "short.ckpt", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  try {
    read_checkpoint(dir / "short.ckpt");
    FAIL() << "truncated checkpoint accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("short.ckpt"), std::string::npos);
  }
}
