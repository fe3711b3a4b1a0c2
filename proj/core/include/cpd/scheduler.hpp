#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace cpd {

// Fork-join worker pool. A fork pushes one side onto a shared task list and
// runs the other inline; the join either reclaims the queued side (runs it
// inline) or helps with other queued tasks while it waits, so arbitrarily
// nested forks cannot deadlock. One scheduler per process; worker count is
// configurable (1 = fully sequential execution).
class Scheduler {
 public:
  static Scheduler& get();

  // Total workers including the calling thread. Must not be called while
  // parallel work is in flight.
  void set_threads(int count);
  int threads() const { return static_cast<int>(workers_.size()) + 1; }

  template <class FA, class FB>
  void fork_join(FA&& fa, FB&& fb) {
    if (workers_.empty()) {
      fa();
      fb();
      return;
    }
    Closure<std::decay_t<FB>> cb{std::forward<FB>(fb)};
    TaskNode node;
    node.invoke = &Closure<std::decay_t<FB>>::run;
    node.closure = &cb;
    push(&node);
    fa();
    join(&node);
  }

  template <class F>
  void parallel_for(std::size_t lo, std::size_t hi, F&& body, std::size_t grain = 0) {
    if (hi <= lo) return;
    if (workers_.empty()) {
      for (std::size_t i = lo; i < hi; ++i) body(i);
      return;
    }
    if (grain == 0) grain = std::max<std::size_t>(1, (hi - lo) / (8u * threads()));
    pf_rec(lo, hi, grain, body);
  }

  // Deterministic tree reduction; combine must be associative.
  template <class T, class Map, class Combine>
  T parallel_reduce(std::size_t lo, std::size_t hi, T identity, Map&& map,
                    Combine&& combine, std::size_t grain = 0) {
    if (hi <= lo) return identity;
    if (workers_.empty()) {
      T acc = identity;
      for (std::size_t i = lo; i < hi; ++i) acc = combine(acc, map(i));
      return acc;
    }
    if (grain == 0) grain = std::max<std::size_t>(1, (hi - lo) / (8u * threads()));
    return reduce_rec(lo, hi, identity, map, combine, grain);
  }

  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

 private:
  Scheduler();

  struct TaskNode {
    TaskNode* prev = nullptr;
    TaskNode* next = nullptr;
    void (*invoke)(void*) = nullptr;
    void* closure = nullptr;
    bool linked = false;
    std::atomic<int> done{0};
  };

  template <class F>
  struct Closure {
    F f;
    static void run(void* self) { static_cast<Closure*>(self)->f(); }
  };

  void push(TaskNode* node);
  void join(TaskNode* node);
  bool help_one();
  void worker_loop();
  void stop_workers();

  template <class F>
  void pf_rec(std::size_t lo, std::size_t hi, std::size_t grain, F& body) {
    while (hi - lo > grain) {
      std::size_t mid = lo + (hi - lo) / 2;
      fork_join([&] { pf_rec(lo, mid, grain, body); },
                [&] { pf_rec(mid, hi, grain, body); });
      return;
    }
    for (std::size_t i = lo; i < hi; ++i) body(i);
  }

  template <class T, class Map, class Combine>
  T reduce_rec(std::size_t lo, std::size_t hi, const T& identity, Map& map,
               Combine& combine, std::size_t grain) {
    if (hi - lo <= grain) {
      T acc = identity;
      for (std::size_t i = lo; i < hi; ++i) acc = combine(acc, map(i));
      return acc;
    }
    std::size_t mid = lo + (hi - lo) / 2;
    T left{}, right{};
    fork_join([&] { left = reduce_rec(lo, mid, identity, map, combine, grain); },
              [&] { right = reduce_rec(mid, hi, identity, map, combine, grain); });
    return combine(left, right);
  }

  std::mutex mu_;
  std::condition_variable cv_;
  TaskNode head_;  // sentinel, head_.next = most recent
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

}  // namespace cpd
