#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "prunemia/checkpoint.hpp"
#include "prunemia/mask.hpp"

using namespace prunemia;

TEST_CASE("checkpoint round-trip is bit exact") {
  Rng rng = substream(21, "ckpt");
  MlpModel m = init_mlp(MlpSpec{7, {5, 4}, 3}, true, rng);
  prune::Mask mask = prune::compute_mask(m, prune::PruneMethod::L2Structured, 0.5);

  Checkpoint ckpt;
  ckpt.model = m;
  ckpt.mask = mask;
  ckpt.method = "l2_structured";
  ckpt.gamma = 0.5;
  const std::string path = "ckpt_test.bin";
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  std::remove(path.c_str());

  REQUIRE(back.model.spec.hidden == m.spec.hidden);
  REQUIRE(back.method == "l2_structured");
  REQUIRE(back.gamma == 0.5);
  REQUIRE(back.model.weights.size() == m.weights.size());
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    REQUIRE(back.model.weights[i].vec() == m.weights[i].vec());
    REQUIRE(back.model.biases[i].vec() == m.biases[i].vec());
  }
  REQUIRE(back.model.scales.size() == 2);
  REQUIRE(back.mask.has_value());
  for (std::size_t i = 0; i < mask.weights.size(); ++i)
    REQUIRE(back.mask->weights[i].vec() == mask.weights[i].vec());
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
  {
    std::ofstream out("ckpt_bad.bin", std::ios::binary);
    out << "NOT-A-CKPT\n";
  }
  REQUIRE_THROWS_AS(load_checkpoint("ckpt_bad.bin"), CheckpointError);
  std::remove("ckpt_bad.bin");

  Rng rng(3);
  Checkpoint ckpt;
  ckpt.model = init_mlp(MlpSpec{4, {3}, 2}, false, rng);
  save_checkpoint(ckpt, "ckpt_trunc.bin");
  std::ifstream in("ckpt_trunc.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  {
    std::ofstream out("ckpt_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 40));
  }
  REQUIRE_THROWS_AS(load_checkpoint("ckpt_trunc.bin"), CheckpointError);
  std::remove("ckpt_trunc.bin");

  REQUIRE_THROWS_AS(load_checkpoint("no_such_file.bin"), CheckpointError);
}
