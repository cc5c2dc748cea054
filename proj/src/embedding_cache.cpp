#include "realdesc/embedding_cache.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cstring>
#include <fstream>

#include "realdesc/errors.hpp"
#include "realdesc/log.hpp"
#include "realdesc/util.hpp"

namespace realdesc {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'R', 'D', 'E', 'C'};

class FileLock {
 public:
  FileLock(const fs::path& path, bool exclusive) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ >= 0) ::flock(fd_, exclusive ? LOCK_EX : LOCK_SH);
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

EmbeddingCache::EmbeddingCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::optional<EmbeddingCache> EmbeddingCache::from_env() {
  auto dir = env("REALDESC_CACHE");
  if (!dir || dir->empty()) return std::nullopt;
  return EmbeddingCache(fs::path(*dir) / "embeddings");
}

std::string EmbeddingCache::key(const std::vector<std::string>& parts) {
  std::uint64_t h = fnv1a64("realdesc-embedding-cache-v1");
  for (const auto& p : parts) {
    h = fnv1a64(p, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return to_hex(h);
}

fs::path EmbeddingCache::file_for(const std::string& key) const {
  return root_ / key.substr(0, 2) / (key + ".bin");
}

bool EmbeddingCache::contains(const std::string& key) const { return fs::exists(file_for(key)); }

std::optional<torch::Tensor> EmbeddingCache::get(const std::string& key) const {
  const auto path = file_for(key);
  FileLock lock(root_ / ".lock", false);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[4];
  std::uint32_t ndim = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&ndim), sizeof ndim);
  if (!in || std::memcmp(magic, kMagic, 4) != 0 || ndim > 8) {
    log::warn("ignoring corrupt cache entry " + path.string());
    return std::nullopt;
  }
  std::vector<int64_t> shape(ndim);
  in.read(reinterpret_cast<char*>(shape.data()), static_cast<std::streamsize>(ndim * sizeof(int64_t)));
  int64_t numel = 1;
  for (auto d : shape) numel *= d;
  auto t = torch::empty(shape, torch::kFloat32);
  in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(numel * sizeof(float)));
  if (!in) {
    log::warn("ignoring truncated cache entry " + path.string());
    return std::nullopt;
  }
  return t;
}

void EmbeddingCache::put(const std::string& key, const torch::Tensor& value) const {
  const auto path = file_for(key);
  fs::create_directories(path.parent_path());
  auto t = value.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const auto tmp = path.string() + ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    const auto ndim = static_cast<std::uint32_t>(t.dim());
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
    for (int64_t d : t.sizes()) out.write(reinterpret_cast<const char*>(&d), sizeof d);
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!out) throw DataError("cannot write cache entry " + tmp);
  }
  FileLock lock(root_ / ".lock", true);
  fs::rename(tmp, path);
}

}  // namespace realdesc
