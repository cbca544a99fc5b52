#ifndef KDTRAIN_RNG_HPP
#define KDTRAIN_RNG_HPP

#include <cstdint>

namespace kdtrain {

// splitmix64 finalizer. Used to derive decorrelated stream seeds from
// structured inputs such as (run seed, epoch, batch index).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  return mix64(base ^ mix64(stream));
}

}  // namespace kdtrain

#endif  // KDTRAIN_RNG_HPP
