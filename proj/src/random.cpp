#include "koopctl/random.hpp"

#include <sstream>

#include "koopctl/errors.hpp"

namespace koopctl {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

RngStreams::RngStreams(std::uint64_t seed) {
  for (std::size_t i = 0; i < kCount; ++i) {
    streams_[i].seed(derive_seed(seed, name(static_cast<Stream>(i))));
  }
}

std::string_view RngStreams::name(Stream s) {
  switch (s) {
    case kInit: return "init";
    case kEnv: return "env";
    case kActorNoise: return "actor-noise";
    case kBufferSampler: return "buffer-sampler";
    case kAugment: return "augment";
    default: return "unknown";
  }
}

std::string RngStreams::serialize() const {
  std::ostringstream os;
  for (const auto& s : streams_) os << s << "\n";
  return os.str();
}

void RngStreams::deserialize(const std::string& text) {
  std::istringstream is(text);
  for (auto& s : streams_) {
    is >> s;
    if (!is) throw CheckpointError("RNG state: truncated or malformed engine text");
  }
}

}  // namespace koopctl
