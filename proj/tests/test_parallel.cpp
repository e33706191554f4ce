#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>
#include <vector>

#include "proker/parallel.hpp"

using namespace proker;

TEST(ParallelFor, VisitsEveryIndexOnce) {
  for (std::size_t threads : {1u, 2u, 5u}) {
    set_num_threads(threads);
    std::vector<int> hits(1001, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) ASSERT_EQ(h, 1);
  }
  set_num_threads(0);
}

TEST(ParallelFor, ZeroCountIsNoop) {
  bool called = false;
  parallel_for(0, [&](std::size_t) { called = true; });
  EXPECT_FALSE(called);
}

TEST(ParallelFor, RethrowsWorkerException) {
  set_num_threads(3);
  EXPECT_THROW(parallel_for(50,
                            [](std::size_t i) {
                              if (i == 17) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
  set_num_threads(0);
}

TEST(ParallelFor, NestedLoopsComplete) {
  set_num_threads(4);
  std::vector<std::atomic<int>> sums(8);
  parallel_for(8, [&](std::size_t i) {
    parallel_for(10, [&](std::size_t j) { sums[i] += static_cast<int>(j); });
  });
  for (auto& s : sums) EXPECT_EQ(s.load(), 45);
  set_num_threads(0);
}

TEST(NumThreads, SetAndDefault) {
  set_num_threads(3);
  EXPECT_EQ(num_threads(), 3u);
  set_num_threads(0);
  EXPECT_GE(num_threads(), 1u);
}
