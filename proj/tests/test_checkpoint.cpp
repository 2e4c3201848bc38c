#include <cstring>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "ebll/checkpoint.hpp"
#include "fixtures.hpp"

using namespace ebll;
using namespace ebll::checkpoint;
namespace fs = std::filesystem;

namespace {

CheckpointError::Kind decode_error(const std::vector<unsigned char>& bytes) {
  try {
    decode(bytes);
  } catch (const CheckpointError& e) {
    return e.kind;
  }
  FAIL("expected a checkpoint error");
  return CheckpointError::Kind::Io;
}

Archive sample_archive() {
  return {{"a", Tensor::vector({1.5, -2.0, 3.25})}, {"b.weight", Tensor::matrix({{1, 2}, {3, 4}, {5, 6}})}};
}

}  // namespace

TEST_CASE("encoded layout follows the documented byte format") {
  const Archive archive{{"xy", Tensor::matrix({{1.0, -0.5}})}};
  const auto bytes = encode(archive);
  REQUIRE(bytes.size() == 4 + 2 + 4 + (2 + 2) + 1 + 2 * 4 + 2 * 8);
  CHECK(std::memcmp(bytes.data(), "EBLL", 4) == 0);
  CHECK(bytes[4] == kVersion);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // array count, little-endian
  CHECK(bytes[10] == 2);  // name length
  CHECK(bytes[12] == 'x');
  CHECK(bytes[14] == 2);  // rank
  CHECK(bytes[15] == 1);  // first dim
  CHECK(bytes[19] == 2);  // second dim
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 23, 8);
  CHECK(first == 1.0);
}

TEST_CASE("archives round-trip bit-exactly") {
  const auto archive = sample_archive();
  const auto back = decode(encode(archive));
  REQUIRE(back.size() == archive.size());
  for (std::size_t i = 0; i < archive.size(); ++i) {
    CHECK(back[i].name == archive[i].name);
    CHECK(back[i].value == archive[i].value);
  }
  CHECK_THROWS_AS(find(back, "missing"), CheckpointError);
}

TEST_CASE("load errors are distinct") {
  auto bytes = encode(sample_archive());
  auto bad = bytes;
  bad[0] = 'X';
  CHECK(decode_error(bad) == CheckpointError::Kind::BadMagic);
  bad = bytes;
  bad[4] = static_cast<unsigned char>(kVersion + 1);
  CHECK(decode_error(bad) == CheckpointError::Kind::VersionMismatch);
  for (std::size_t cut : {std::size_t{2}, std::size_t{5}, std::size_t{12}, bytes.size() - 1}) {
    CHECK(decode_error(std::vector<unsigned char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut))) ==
          CheckpointError::Kind::Truncated);
  }
  try {
    load(fs::temp_directory_path() / "ebll_no_such_checkpoint.ckpt");
    FAIL("expected an io error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind == CheckpointError::Kind::Io);
  }
}

TEST_CASE("files on disk round-trip and a truncated file is reported, not fatal") {
  const auto path = fs::temp_directory_path() / "ebll_roundtrip.ckpt";
  save(sample_archive(), path);
  CHECK(load(path)[1].value == sample_archive()[1].value);
  fs::resize_file(path, fs::file_size(path) - 3);
  try {
    load(path);
    FAIL("expected a truncation error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind == CheckpointError::Kind::Truncated);
  }
  std::ofstream(path, std::ios::binary) << "XBLL and then some";
  try {
    load(path);
    FAIL("expected a magic error");
  } catch (const CheckpointError& e) {
    CHECK(e.kind == CheckpointError::Kind::BadMagic);
  }
}

TEST_CASE("model checkpoints preserve behaviour to the last bit") {
  for (auto s : {lifelong::Strategy::EBLL, lifelong::Strategy::EBLLSeparateFCs}) {
    const auto cfg = fixture::tiny_config(2);
    const auto tasks = fixture::tiny_tasks(2, 2);
    const auto run = lifelong::run_sequence(tasks, s, cfg);
    const auto& m = run.final_state.model;
    const auto back = model_from_archive(decode(encode(to_archive(m))));
    CHECK(back.tasks() == m.tasks());
    const auto probe = tasks[1].test.inputs;
    for (int t : m.tasks()) CHECK(back.probabilities(t, probe) == m.probabilities(t, probe));
    CHECK(back.parameter_count() == m.parameter_count());

    const auto& ae = run.final_state.encoders.at(1);
    const auto ae_back = autoencoder_from_archive(decode(encode(to_archive(ae, "enc1"))), "enc1");
    CHECK(ae_back.reconstruct(m.features(probe)) == ae.reconstruct(m.features(probe)));
  }
}

TEST_CASE("task memories round-trip with their sample ids") {
  const auto cfg = fixture::tiny_config(3);
  const auto tasks = fixture::tiny_tasks(2, 3);
  const auto run = lifelong::run_sequence(tasks, lifelong::Strategy::EBLL, cfg);
  const auto& memory = run.final_state.memory;
  const auto back = memory_from_archive(decode(encode(to_archive(memory))));
  REQUIRE(back.entries.size() == memory.entries.size());
  for (std::size_t i = 0; i < memory.entries.size(); ++i) {
    const auto& a = memory.entries[i];
    const auto& b = back.entries[i];
    CHECK(a.task_id == b.task_id);
    CHECK(a.alpha == b.alpha);
    CHECK(a.targets.ids() == b.targets.ids());
    CHECK(a.targets.checksum() == b.targets.checksum());
    CHECK(a.codes.checksum() == b.codes.checksum());
    REQUIRE(b.encoder.has_value());
    CHECK(b.encoder->parameters()[0]->value == a.encoder->parameters()[0]->value);
  }
}

TEST_CASE("feature extraction leaves the F and T arrays' checksum unchanged") {
  const auto cfg = fixture::tiny_config(4);
  const auto tasks = fixture::tiny_tasks(2, 4);
  const auto run = lifelong::run_sequence(tasks, lifelong::Strategy::FeatureExtraction, cfg);
  const std::vector<std::string> trunk{"F.", "T."};
  const auto before = checksum(to_archive(run.models_after_task[0]), trunk);
  const auto after = checksum(to_archive(run.models_after_task[1]), trunk);
  CHECK(before == after);
  const auto heads = checksum(to_archive(run.models_after_task[1]), {"head"});
  CHECK(heads != checksum(to_archive(run.models_after_task[0]), {"head"}));

  const auto ft = lifelong::run_sequence(tasks, lifelong::Strategy::Finetune, cfg);
  CHECK(checksum(to_archive(ft.models_after_task[0]), trunk) != checksum(to_archive(ft.models_after_task[1]), trunk));
}
