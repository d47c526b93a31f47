#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include <gtest/gtest.h>

#include "caae/run.hpp"
#include "caae/synthetic.hpp"

using namespace caae;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.hidden = 8;
  c.layers = 1;
  c.n_candidates = 2;
  c.noise_width = 4;
  c.seed = 9;
  return c;
}

TrainConfig small_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.aux_n = 2;
  t.seed = 17;
  t.log_wall_time = false;
  return t;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("caae_ckpt_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

template <typename T>
std::vector<T> flat(ParamStore<T>& s) {
  std::vector<T> out;
  for (auto& p : s.params()) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripsParamsVocabAndMeta) {
  const auto ex = synthetic_corpus(20, 1);
  const Vocab v = Vocab::build(ex, 1);
  ModelBundle<double> a(small_config(v.size()));
  ModelConfig other = small_config(v.size());
  other.seed = 10;
  ModelBundle<double> b(other);
  ASSERT_NE(flat(a.store()), flat(b.store()));

  CheckpointWriter w(v, {{"kind", "full"}, {"epoch", 3}});
  w.add_params(a.store());
  std::stringstream buf;
  w.write(buf);
  const auto d = read_checkpoint(buf);
  EXPECT_TRUE(d.vocab == v);
  EXPECT_EQ(d.meta.at("epoch"), 3);
  load_params(d, b.store());
  EXPECT_EQ(flat(a.store()), flat(b.store()));
}

TEST(Checkpoint, FloatParamsRoundTripExactly) {
  const auto ex = synthetic_corpus(20, 1);
  const Vocab v = Vocab::build(ex, 1);
  BaselineModel<float> a(small_config(v.size()));
  CheckpointWriter w(v, nlohmann::json::object());
  w.add_params(a.store());
  std::stringstream buf;
  w.write(buf);
  ModelConfig other = small_config(v.size());
  other.seed = 2;
  BaselineModel<float> b(other);
  load_params(read_checkpoint(buf), b.store());
  EXPECT_EQ(flat(a.store()), flat(b.store()));
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream junk("NOPE....");
  EXPECT_THROW(read_checkpoint(junk), DataError);

  const auto ex = synthetic_corpus(20, 1);
  const Vocab v = Vocab::build(ex, 1);
  ModelBundle<double> a(small_config(v.size()));
  CheckpointWriter w(v, nlohmann::json::object());
  w.add_params(a.store());
  std::stringstream buf;
  w.write(buf);
  const std::string bytes = buf.str();
  std::stringstream cut(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(cut), DataError);

  ModelConfig wider = small_config(v.size());
  wider.hidden = 10;
  ModelBundle<double> c(wider);
  std::stringstream again(bytes);
  EXPECT_THROW(load_params(read_checkpoint(again), c.store()), DataError);
}

TEST(Checkpoint, WriteLeavesNoTemporary) {
  TempDir dir("atomic");
  const auto ex = synthetic_corpus(20, 1);
  const Vocab v = Vocab::build(ex, 1);
  ModelBundle<double> a(small_config(v.size()));
  CheckpointWriter w(v, nlohmann::json::object());
  w.add_params(a.store());
  w.write(dir.str("x.ckpt"));
  EXPECT_TRUE(fs::exists(dir.str("x.ckpt")));
  EXPECT_FALSE(fs::exists(dir.str("x.ckpt.tmp")));
  EXPECT_THROW(read_checkpoint(dir.str("missing.ckpt")), IoError);
}

TEST(Resume, FullRunMatchesUninterrupted) {
  const auto ex = synthetic_corpus(24, 4);
  const Vocab v = Vocab::build(ex, 1);
  TempDir whole("whole"), part("part");

  ModelBundle<double> a(small_config(v.size()));
  RunOptions oa;
  oa.out_dir = whole.str();
  const auto sa = train_full(a, v, ex, small_train(3), oa);
  EXPECT_EQ(sa.epochs_done, 3u);
  EXPECT_EQ(sa.iterations, 18u);

  ModelBundle<double> b(small_config(v.size()));
  RunOptions ob;
  ob.out_dir = part.str();
  train_full(b, v, ex, small_train(1), ob);
  ModelBundle<double> c(small_config(v.size()));
  ob.resume = checkpoint_path(part.str(), 1);
  const auto sc = train_full(c, v, ex, small_train(3), ob);
  EXPECT_EQ(sc.iterations, 18u);

  EXPECT_EQ(slurp(whole.str("metrics.jsonl")), slurp(part.str("metrics.jsonl")));
  EXPECT_EQ(flat(a.store()), flat(c.store()));
  EXPECT_EQ(slurp(checkpoint_path(whole.str(), 3)), slurp(checkpoint_path(part.str(), 3)));
}

TEST(Resume, ResumingAfterLaterLinesTruncatesTheLog) {
  const auto ex = synthetic_corpus(16, 4);
  const Vocab v = Vocab::build(ex, 1);
  TempDir dir("trunc");
  BaselineModel<double> a(small_config(v.size()));
  RunOptions o;
  o.out_dir = dir.str();
  train_baseline(a, v, ex, small_train(2), o);
  const std::string full = slurp(dir.str("metrics.jsonl"));

  // Restart from epoch 1 in the same directory; epoch 2 lines are replaced.
  BaselineModel<double> b(small_config(v.size()));
  o.resume = checkpoint_path(dir.str(), 1);
  train_baseline(b, v, ex, small_train(2), o);
  EXPECT_EQ(slurp(dir.str("metrics.jsonl")), full);
  EXPECT_EQ(flat(a.store()), flat(b.store()));
}

TEST(Resume, ProbeRunMatchesUninterrupted) {
  const auto ex = synthetic_corpus(16, 6);
  const Vocab v = Vocab::build(ex, 1);
  TempDir whole("pwhole"), part("ppart");
  ModelBundle<float> a(small_config(v.size()));
  RunOptions oa;
  oa.out_dir = whole.str();
  train_probe(a, v, ex, small_train(2), oa);
  ModelBundle<float> b(small_config(v.size()));
  RunOptions ob;
  ob.out_dir = part.str();
  train_probe(b, v, ex, small_train(1), ob);
  ModelBundle<float> c(small_config(v.size()));
  ob.resume = checkpoint_path(part.str(), 1);
  train_probe(c, v, ex, small_train(2), ob);
  EXPECT_EQ(slurp(whole.str("metrics.jsonl")), slurp(part.str("metrics.jsonl")));
  EXPECT_EQ(flat(a.store()), flat(c.store()));
}

TEST(Resume, WrongKindIsRejected) {
  const auto ex = synthetic_corpus(8, 6);
  const Vocab v = Vocab::build(ex, 1);
  TempDir dir("kind");
  BaselineModel<double> a(small_config(v.size()));
  RunOptions o;
  o.out_dir = dir.str();
  train_baseline(a, v, ex, small_train(1), o);
  ModelBundle<double> m(small_config(v.size()));
  o.resume = checkpoint_path(dir.str(), 1);
  EXPECT_THROW(train_full(m, v, ex, small_train(2), o), DataError);
}

TEST(Resume, EpochSeedsDiffer) {
  EXPECT_NE(epoch_seed(1, 0), epoch_seed(1, 1));
  EXPECT_NE(epoch_seed(1, 0), epoch_seed(2, 0));
  EXPECT_EQ(epoch_seed(5, 3), epoch_seed(5, 3));
}
