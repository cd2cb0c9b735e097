#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fixtures.hpp"
#include "instructtime/checkpoint.hpp"
#include "instructtime/classifier.hpp"
#include "instructtime/datastore.hpp"
#include "instructtime/errors.hpp"

using namespace instructtime;
using namespace instructtime::datastore;
namespace fs = std::filesystem;

namespace {

synth::AttributeSchema small_schema() { return synth::AttributeSchema::synthetic({"trend", "shift"}); }

TimeSeries make_series(std::string id, std::vector<double> values, synth::Split split) {
  TimeSeries ts;
  ts.id = std::move(id);
  ts.values = std::move(values);
  ts.attributes = {{"trend", "flat"}, {"shift", "none"}};
  ts.split = split;
  return ts;
}

checkpoint::ModelMeta tiny_meta() {
  checkpoint::ModelMeta meta;
  meta.schema = small_schema();
  meta.templates = synth::TemplateBank::synthetic();
  meta.provider.width = 32;
  meta.training_log_digest = "abc";
  return meta;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST(Jsonl, SeriesRoundTripIsBitExact) {
  auto ts = make_series("s-1", {0.1, -1e-300, 3.141592653589793, 1e308, -0.0}, synth::Split::validation);
  ts.description = "No trend. No sharp shifts.";
  const auto back = series_from_json(series_to_json(ts));
  EXPECT_EQ(back.id, ts.id);
  ASSERT_EQ(back.values.size(), ts.values.size());
  for (std::size_t i = 0; i < ts.values.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.values[i]), std::bit_cast<std::uint64_t>(ts.values[i]));
  EXPECT_EQ(back.attributes, ts.attributes);
  EXPECT_EQ(back.description, ts.description);
  EXPECT_EQ(back.split, ts.split);
  EXPECT_THROW(series_from_json("{not json"), InputError);
}

TEST(Jsonl, DatasetDirectoryRoundTrip) {
  fixtures::TempDir dir;
  const auto cfg = fixtures::tiny_synth(24, 2);
  const auto ds = synth::generate_dataset(cfg);
  write_dataset_dir(ds, dir / "data", cfg);
  EXPECT_TRUE(fs::exists(dir / "data" / "dataset.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "data" / "splits.json"));
  Manifest manifest;
  const auto back = load_dataset(dir / "data", &manifest);
  EXPECT_EQ(back.schema, ds.schema);
  ASSERT_EQ(back.series.size(), ds.series.size());
  for (std::size_t i = 0; i < ds.series.size(); ++i) {
    EXPECT_EQ(back.series[i].values, ds.series[i].values);
    EXPECT_EQ(back.series[i].split, ds.series[i].split);
  }
  EXPECT_EQ(manifest.count, ds.series.size());
  ASSERT_TRUE(manifest.synth.has_value());
  EXPECT_EQ(manifest.synth->seed, cfg.seed);
  EXPECT_EQ(dataset_fingerprint(back), dataset_fingerprint(ds));

  const auto bare = load_dataset(dir / "data" / "dataset.jsonl");
  EXPECT_EQ(bare.series.size(), ds.series.size());
}

TEST(Normalization, TrainSplitStatistics) {
  Dataset ds;
  ds.schema = small_schema();
  ds.series = {make_series("a", {0, 0}, synth::Split::train), make_series("b", {2, 2}, synth::Split::train),
               make_series("c", {100, 100}, synth::Split::test)};
  const auto s = compute_normalization(ds);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.stddev, 1.0);
  for (double v : {-3.5, 0.0, 7.25}) EXPECT_NEAR(s.destandardize(s.standardize(v)), v, 1e-12);
  ds.series = {make_series("a", {4, 4}, synth::Split::train), make_series("b", {4, 4}, synth::Split::train)};
  EXPECT_THROW(compute_normalization(ds), InputError);
}

TEST(Csv, WideFormat) {
  const std::string text =
      "id,trend,shift,v0,v1,v2\n"
      "a,flat,none,1,2,3\n"
      "b,upward-linear,upward,4,5,6\n"
      "c,flat,downward,7,8,9\n";
  IngestReport rep;
  const auto ds = ingest_csv_text(text, small_schema(), {}, &rep);
  EXPECT_TRUE(rep.ok()) << rep.to_string();
  ASSERT_EQ(ds.series.size(), 3u);
  EXPECT_EQ(ds.series[1].values, (std::vector<double>{4, 5, 6}));
  EXPECT_EQ(ds.series[1].attributes.at("trend"), "upward-linear");
  EXPECT_EQ(rep.rows_read, 3u);
}

TEST(Csv, MalformedRowIsReported) {
  const std::string text =
      "id,trend,shift,v0,v1\n"
      "a,flat,none,1,2\n"
      "b,flat,none,1,oops\n"
      "c,sideways,none,1,2\n";
  IngestReport rep;
  const auto ds = ingest_csv_text(text, small_schema(), {}, &rep);
  EXPECT_EQ(ds.series.size(), 1u);
  ASSERT_EQ(rep.issues.size(), 2u);
  EXPECT_EQ(rep.issues[0].row, 2u);
  EXPECT_NE(rep.issues[0].message.find("oops"), std::string::npos);
  EXPECT_EQ(rep.issues[1].row, 3u);
  EXPECT_NE(rep.to_string().find("sideways"), std::string::npos);
  EXPECT_THROW(ingest_csv_text("id,v0\n", small_schema(), {}), InputError);
}

TEST(Csv, LongFormatEqualsWide) {
  const std::string wide =
      "id,trend,shift,split,v0,v1,v2\n"
      "a,flat,none,train,1,2,3\n"
      "b,flat,upward,test,4,5,6\n";
  const std::string long_text =
      "id,t,value,trend,shift,split\n"
      "a,2,3,flat,none,train\n"
      "b,0,4,flat,upward,test\n"
      "a,0,1,flat,none,train\n"
      "a,1,2,flat,none,train\n"
      "b,1,5,flat,upward,test\n"
      "b,2,6,flat,upward,test\n";
  CsvOptions lopt;
  lopt.layout = CsvLayout::long_format;
  const auto w = ingest_csv_text(wide, small_schema(), {});
  const auto l = ingest_csv_text(long_text, small_schema(), lopt);
  ASSERT_EQ(w.series.size(), l.series.size());
  for (std::size_t i = 0; i < w.series.size(); ++i) {
    EXPECT_EQ(w.series[i].id, l.series[i].id);
    EXPECT_EQ(w.series[i].values, l.series[i].values);
    EXPECT_EQ(w.series[i].attributes, l.series[i].attributes);
    EXPECT_EQ(w.series[i].split, l.series[i].split);
  }
}

TEST(AtomicWrite, ReplacesContent) {
  fixtures::TempDir dir;
  atomic_write(dir / "f.txt", "one");
  atomic_write(dir / "f.txt", "two");
  EXPECT_EQ(read_file(dir / "f.txt"), "two");
  EXPECT_FALSE(fs::exists(dir / "f.txt.tmp"));
}

class CheckpointTest : public ::testing::Test {
protected:
  void SetUp() override {
    model_ = fixtures::tiny_model();
    model_->set_normalization(model::NormalizationStats{0.5, 2.0, "fp"});
    for (auto* p : model_->all_params()) p->value.array() += 1e-3 * std::sqrt(2.0);
    path_ = dir_ / "model.ckpt";
    checkpoint::save_model(*model_, tiny_meta(), path_);
    bytes_ = read_file(path_);
  }
  fixtures::TempDir dir_;
  std::unique_ptr<model::InstructTimeModel> model_;
  fs::path path_;
  std::string bytes_;
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const auto loaded = checkpoint::load_model(path_);
  const auto a = model_->all_params();
  const auto b = loaded.model->all_params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  }
  ASSERT_TRUE(loaded.model->normalization().has_value());
  EXPECT_EQ(loaded.model->normalization()->stddev, 2.0);
  EXPECT_EQ(loaded.header.training_log_digest, "abc");
  EXPECT_EQ(loaded.header.schema, small_schema());
  EXPECT_EQ(loaded.templates.canonical("trend", "flat"), "No trend.");
  const auto zc = model_->encode_instruction("No trend.");
  EXPECT_EQ(model_->decode(zc, zc), loaded.model->decode(loaded.model->encode_instruction("No trend."),
                                                         loaded.model->encode_instruction("No trend.")));
  checkpoint::save_model(*loaded.model, tiny_meta(), dir_ / "again.ckpt");
  EXPECT_EQ(read_file(dir_ / "again.ckpt"), bytes_);
}

TEST_F(CheckpointTest, HeaderOnlyRead) {
  const auto h = checkpoint::read_header(path_);
  EXPECT_EQ(h.kind, "model");
  EXPECT_EQ(h.format_version, checkpoint::kFormatVersion);
  EXPECT_EQ(h.tensors.size(), model_->all_params().size());
  EXPECT_EQ(h.config.branches, 2);
}

TEST_F(CheckpointTest, TruncationDetected) {
  write_bytes(path_, bytes_.substr(0, bytes_.size() - 1));
  EXPECT_THROW(checkpoint::load_model(path_), TruncatedCheckpointError);
  write_bytes(path_, bytes_.substr(0, 12));
  EXPECT_THROW(checkpoint::load_model(path_), TruncatedCheckpointError);
}

TEST_F(CheckpointTest, CorruptionDetected) {
  auto flipped = bytes_;
  flipped[flipped.size() - 5] ^= 0x10;
  write_bytes(path_, flipped);
  EXPECT_THROW(checkpoint::load_model(path_), CorruptCheckpointError);
  write_bytes(path_, "not a checkpoint at all, just text");
  EXPECT_THROW(checkpoint::load_model(path_), CorruptCheckpointError);
  write_bytes(path_, bytes_ + "x");
  EXPECT_THROW(checkpoint::load_model(path_), CorruptCheckpointError);
}

TEST_F(CheckpointTest, FormatVersionRejected) {
  auto bumped = bytes_;
  const auto pos = bumped.find("\"format_version\":1");
  ASSERT_NE(pos, std::string::npos);
  bumped[pos + 17] = '9';
  write_bytes(path_, bumped);
  EXPECT_THROW(checkpoint::read_header(path_), FormatVersionError);
}

TEST_F(CheckpointTest, FingerprintMismatchRejected) {
  auto other = std::make_shared<text::HashEmbedder>(32, "another-model");
  EXPECT_THROW(checkpoint::load_model(path_, other), FingerprintMismatchError);
  model::InstructTimeModel target(fixtures::tiny_config(), other);
  EXPECT_THROW(checkpoint::load_into(target, path_), FingerprintMismatchError);
}

TEST_F(CheckpointTest, ErrorsAreDistinct) {
  auto flipped = bytes_;
  flipped[flipped.size() - 5] ^= 0x10;
  write_bytes(dir_ / "corrupt.ckpt", flipped);
  auto other = std::make_shared<text::HashEmbedder>(32, "another-model");
  std::string corrupt_kind, mismatch_kind;
  try {
    checkpoint::load_model(dir_ / "corrupt.ckpt");
  } catch (const CorruptCheckpointError&) {
    corrupt_kind = "corrupt";
  } catch (const CheckpointError&) {
    corrupt_kind = "other";
  }
  try {
    checkpoint::load_model(path_, other);
  } catch (const FingerprintMismatchError&) {
    mismatch_kind = "fingerprint";
  } catch (const CheckpointError&) {
    mismatch_kind = "other";
  }
  EXPECT_EQ(corrupt_kind, "corrupt");
  EXPECT_EQ(mismatch_kind, "fingerprint");
}

TEST_F(CheckpointTest, LoadIntoIsAllOrNothing) {
  auto target = fixtures::tiny_model(24, 99);
  const auto before = target->snapshot();
  auto flipped = bytes_;
  flipped[flipped.size() - 5] ^= 0x10;
  write_bytes(dir_ / "bad.ckpt", flipped);
  EXPECT_THROW(checkpoint::load_into(*target, dir_ / "bad.ckpt"), CorruptCheckpointError);
  auto bigger = fixtures::tiny_model(30, 99);
  EXPECT_THROW(checkpoint::load_into(*bigger, path_), CheckpointError);
  const auto after = target->snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
  checkpoint::load_into(*target, path_);
  EXPECT_EQ(target->all_params()[0]->value, model_->all_params()[0]->value);
}

TEST(ClassifierCheckpoint, RoundTrip) {
  fixtures::TempDir dir;
  const auto ds = synth::generate_dataset(fixtures::tiny_synth(24, 2));
  classifier::ClassifierConfig c;
  c.encoder = fixtures::tiny_config();
  c.epochs = 1;
  c.batch_size = 16;
  const auto set = classifier::train_attribute_classifiers(ds, c);
  checkpoint::save_classifiers(set, dir / "cls.ckpt");
  const auto back = checkpoint::load_classifiers(dir / "cls.ckpt");
  ASSERT_EQ(back.size(), set.size());
  tensor::Matrix x(24, 2);
  for (int j = 0; j < 2; ++j)
    for (int t = 0; t < 24; ++t) x(t, j) = ds.series[static_cast<std::size_t>(j)].values[t];
  for (std::size_t k = 0; k < set.size(); ++k) {
    EXPECT_EQ(back[k]->attribute(), set[k]->attribute());
    EXPECT_EQ(back[k]->levels(), set[k]->levels());
    EXPECT_EQ(back[k]->normalization().stddev, set[k]->normalization().stddev);
    EXPECT_EQ(back[k]->predict_proba(x), set[k]->predict_proba(x));
  }
  EXPECT_THROW(checkpoint::load_model(dir / "cls.ckpt"), CorruptCheckpointError);
  EXPECT_THROW(checkpoint::save_classifiers({}, dir / "none.ckpt"), ConfigError);
}
