#include <catch2/catch_amalgamated.hpp>

#include <fk/bench.hpp>

using namespace fk;

TEST_CASE("bench rows measure both modes and serialize", "[bench]") {
  BenchOptions opt;
  opt.iterations = 2000;  // smoke-test scale
  opt.filter = "uframe_read_4k|heap_object_48";
  auto rows = run_bench(opt);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.checked_ns > 0);
    CHECK(r.unchecked_ns > 0);
    CHECK(std::isfinite(r.ratio()));
  }

  auto csv = bench_csv(rows);
  CHECK(csv.rfind("op,checked_ns,unchecked_ns,ratio\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  auto table = bench_table(rows);
  CHECK(table.find("uframe_read_4k") != std::string::npos);
  CHECK(table.find('%') != std::string::npos);
}

TEST_CASE("the bench filter narrows the row set", "[bench]") {
  BenchOptions opt;
  opt.iterations = 500;
  opt.filter = "no_such_row";
  CHECK(run_bench(opt).empty());
}
