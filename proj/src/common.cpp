#include "personarl/common.hpp"

#include <cstdio>
#include <fstream>

namespace personarl {

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k > n) throw ConfigError("sample_without_replacement: k > n");
  // Partial Fisher-Yates over an index pool.
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out(k);
  for (int i = 0; i < k; ++i) {
    int j = i + uniform_int(n - i);
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

std::vector<int> Rng::permutation(int n) { return sample_without_replacement(n, n); }

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("fnv1a64_file: cannot open " + path);
  uint64_t h = 0xCBF29CE484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace personarl
