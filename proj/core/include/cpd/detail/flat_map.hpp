#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace cpd::detail {

// Open-addressing hash map, uint64 -> uint64, linear probing with
// backward-shift deletion. Keys must not equal kEmpty.
class FlatMap {
 public:
  static constexpr std::uint64_t kEmpty = ~0ull;

  FlatMap() { reset(16); }

  void clear() { reset(16); }

  std::size_t size() const { return size_; }

  bool insert(std::uint64_t key, std::uint64_t value) {
    assert(key != kEmpty);
    if ((size_ + 1) * 10 >= keys_.size() * 7) grow();
    std::size_t i = slot(key);
    while (keys_[i] != kEmpty) {
      if (keys_[i] == key) return false;
      i = next(i);
    }
    keys_[i] = key;
    vals_[i] = value;
    ++size_;
    return true;
  }

  // Insert or overwrite.
  void set(std::uint64_t key, std::uint64_t value) {
    assert(key != kEmpty);
    if ((size_ + 1) * 10 >= keys_.size() * 7) grow();
    std::size_t i = slot(key);
    while (keys_[i] != kEmpty) {
      if (keys_[i] == key) {
        vals_[i] = value;
        return;
      }
      i = next(i);
    }
    keys_[i] = key;
    vals_[i] = value;
    ++size_;
  }

  const std::uint64_t* find(std::uint64_t key) const {
    std::size_t i = slot(key);
    while (keys_[i] != kEmpty) {
      if (keys_[i] == key) return &vals_[i];
      i = next(i);
    }
    return nullptr;
  }

  bool erase(std::uint64_t key) {
    std::size_t i = slot(key);
    while (keys_[i] != kEmpty) {
      if (keys_[i] == key) {
        backshift(i);
        --size_;
        return true;
      }
      i = next(i);
    }
    return false;
  }

  template <class F>
  void for_each(F&& f) const {
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (keys_[i] != kEmpty) f(keys_[i], vals_[i]);
    }
  }

 private:
  std::vector<std::uint64_t> keys_, vals_;
  std::size_t size_ = 0;
  std::size_t mask_ = 0;

  void reset(std::size_t cap) {
    keys_.assign(cap, kEmpty);
    vals_.assign(cap, 0);
    mask_ = cap - 1;
    size_ = 0;
  }

  static std::uint64_t hash(std::uint64_t x) {
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdull;
    x ^= x >> 33;
    x *= 0xc4ceb9fe1a85ec53ull;
    x ^= x >> 33;
    return x;
  }

  std::size_t slot(std::uint64_t key) const { return hash(key) & mask_; }
  std::size_t next(std::size_t i) const { return (i + 1) & mask_; }

  void backshift(std::size_t hole) {
    std::size_t i = next(hole);
    while (keys_[i] != kEmpty) {
      std::size_t ideal = slot(keys_[i]);
      // Entry may move back iff its ideal slot lies outside (hole, i].
      bool movable = (hole <= i) ? (ideal <= hole || ideal > i)
                                 : (ideal <= hole && ideal > i);
      if (movable) {
        keys_[hole] = keys_[i];
        vals_[hole] = vals_[i];
        hole = i;
      }
      i = next(i);
    }
    keys_[hole] = kEmpty;
  }

  void grow() {
    std::vector<std::uint64_t> ok = std::move(keys_), ov = std::move(vals_);
    reset(2 * (mask_ + 1));
    std::size_t restored = 0;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      if (ok[i] == kEmpty) continue;
      std::size_t j = slot(ok[i]);
      while (keys_[j] != kEmpty) j = next(j);
      keys_[j] = ok[i];
      vals_[j] = ov[i];
      ++restored;
    }
    size_ = restored;
  }
};

}  // namespace cpd::detail
