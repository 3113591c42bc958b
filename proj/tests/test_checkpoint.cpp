#include "doctest_torch.hpp"

#include <fstream>

#include "priorlens/checkpoint.hpp"
#include "priorlens/error.hpp"
#include "priorlens/pyramid.hpp"
#include "priorlens/rng.hpp"
#include "support.hpp"

using namespace priorlens;
namespace ts = testing_support;

TEST_CASE("container round trip keeps header, names and values") {
  ts::TempDir tmp("container");
  checkpoint::Container c;
  c.header["kind"] = "test";
  c.add("a", torch::randn({2, 3}));
  c.add("b", torch::randn({4}, torch::kFloat64));
  c.add("c", torch::tensor(std::int64_t{42}));
  c.save(tmp.path() / "c.plck");
  const auto d = checkpoint::Container::load(tmp.path() / "c.plck");
  CHECK(d.header.at("kind") == "test");
  REQUIRE(d.tensors().size() == 3);
  for (const auto& [name, t] : c.tensors()) CHECK(torch::equal(d.get(name), t));
  CHECK_FALSE(d.has("z"));
  CHECK_THROWS(d.get("z"));
}

TEST_CASE("container rejects foreign and truncated files") {
  ts::TempDir tmp("container_bad");
  std::ofstream(tmp.path() / "junk") << "not a checkpoint at all";
  CHECK_THROWS(checkpoint::Container::load(tmp.path() / "junk"));
  checkpoint::Container c;
  c.add("a", torch::randn({64}));
  c.save(tmp.path() / "ok");
  std::filesystem::resize_file(tmp.path() / "ok", std::filesystem::file_size(tmp.path() / "ok") - 16);
  CHECK_THROWS(checkpoint::Container::load(tmp.path() / "ok"));
  CHECK_THROWS(checkpoint::Container::load(tmp.path() / "missing"));
}

TEST_CASE("module export and import restore parameters exactly") {
  torch::manual_seed(1);
  PyramidEncoder a(PyramidSpec{}, false);
  torch::manual_seed(2);
  PyramidEncoder b(PyramidSpec{}, false);
  CHECK(checkpoint::parameter_checksum(*a) != checkpoint::parameter_checksum(*b));
  checkpoint::Container c;
  checkpoint::export_module(c, *a, "enc.");
  checkpoint::import_module(c, *b, "enc.");
  CHECK(checkpoint::parameter_checksum(*a) == checkpoint::parameter_checksum(*b));

  PyramidEncoder wrong(PyramidSpec{{16, 64, 128}}, false);
  CHECK_THROWS(checkpoint::import_module(c, *wrong, "enc."));
}

TEST_CASE("digest is stable") {
  CHECK(checkpoint::digest_hex("") == "cbf29ce484222325");
  CHECK(checkpoint::digest_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("seed mixing is deterministic and stream separated") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(1, 2) != mix_seed(1, 3));
  CHECK(mix_seed(1, 2) != mix_seed(2, 2));
  Rng a(4);
  Rng b(4);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK((u >= 0.0 && u < 1.0));
  }
}
