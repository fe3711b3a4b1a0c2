#include "cpd/scheduler.hpp"

namespace cpd {

Scheduler& Scheduler::get() {
  static Scheduler s;
  return s;
}

Scheduler::Scheduler() {
  head_.next = &head_;
  head_.prev = &head_;
  unsigned hw = std::thread::hardware_concurrency();
  set_threads(hw == 0 ? 1 : static_cast<int>(hw));
}

Scheduler::~Scheduler() { stop_workers(); }

void Scheduler::stop_workers() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : workers_) t.join();
  workers_.clear();
  stopping_ = false;
}

void Scheduler::set_threads(int count) {
  if (count < 1) count = 1;
  stop_workers();
  for (int i = 1; i < count; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

void Scheduler::push(TaskNode* node) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    node->next = head_.next;
    node->prev = &head_;
    head_.next->prev = node;
    head_.next = node;
    node->linked = true;
  }
  cv_.notify_one();
}

void Scheduler::worker_loop() {
  std::unique_lock<std::mutex> lk(mu_);
  for (;;) {
    while (!stopping_ && head_.next == &head_) cv_.wait(lk);
    if (stopping_) return;
    TaskNode* node = head_.next;
    node->prev->next = node->next;
    node->next->prev = node->prev;
    node->linked = false;
    lk.unlock();
    node->invoke(node->closure);
    node->done.store(1, std::memory_order_release);
    node->done.notify_all();
    lk.lock();
  }
}

bool Scheduler::help_one() {
  TaskNode* node = nullptr;
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (head_.next != &head_) {
      node = head_.next;
      node->prev->next = node->next;
      node->next->prev = node->prev;
      node->linked = false;
    }
  }
  if (!node) return false;
  node->invoke(node->closure);
  node->done.store(1, std::memory_order_release);
  node->done.notify_all();
  return true;
}

void Scheduler::join(TaskNode* node) {
  bool run_inline = false;
  {
    std::lock_guard<std::mutex> lk(mu_);
    if (node->linked) {
      node->prev->next = node->next;
      node->next->prev = node->prev;
      node->linked = false;
      run_inline = true;
    }
  }
  if (run_inline) {
    node->invoke(node->closure);
    return;
  }
  // Claimed by a worker: help with other tasks until it completes.
  while (node->done.load(std::memory_order_acquire) == 0) {
    if (!help_one()) node->done.wait(0, std::memory_order_acquire);
  }
}

}  // namespace cpd
