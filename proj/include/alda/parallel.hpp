#pragma once

#include <cstddef>
#include <functional>

namespace alda {

// Worker threads used by the parallel stages. 0 means hardware concurrency.
void set_num_threads(std::size_t n);
std::size_t num_threads();

// Runs fn(shard) for every shard in [0, num_shards). Shards are claimed
// dynamically by the worker threads; callers keep one accumulator per shard
// and reduce them in shard order, so results never depend on the thread
// count.
void for_each_shard(std::size_t num_shards, const std::function<void(std::size_t)>& fn);

}  // namespace alda
