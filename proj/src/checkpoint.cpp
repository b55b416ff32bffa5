#include "koopctl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "koopctl/errors.hpp"

namespace koopctl {

static_assert(std::endian::native == std::endian::little, "checkpoint blob assumes a little-endian host");

namespace {

std::string read_section(std::istream& in, const std::string& open, const std::string& close) {
  std::string line;
  if (!std::getline(in, line) || line != open) throw CheckpointError("checkpoint manifest: expected " + open);
  std::string body;
  while (std::getline(in, line)) {
    if (line == close) return body;
    body += line + "\n";
  }
  throw CheckpointError("checkpoint manifest: missing " + close);
}

}  // namespace

std::filesystem::path checkpoint_stem(const std::filesystem::path& path) {
  if (path.extension() == ".manifest" || path.extension() == ".bin") {
    auto stem = path;
    return stem.replace_extension();
  }
  return path;
}

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return m;
  }
  throw CheckpointError("checkpoint: missing tensor '" + name + "'");
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors) {
    if (n == name) return true;
  }
  return false;
}

long long Checkpoint::scalar(const std::string& name) const {
  for (const auto& [n, v] : scalars) {
    if (n == name) return v;
  }
  throw CheckpointError("checkpoint: missing scalar '" + name + "'");
}

std::filesystem::path Checkpoint::save(const std::filesystem::path& stem_in) const {
  const auto stem = checkpoint_stem(stem_in);
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  auto manifest_path = stem;
  manifest_path += ".manifest";
  auto blob_path = stem;
  blob_path += ".bin";

  std::vector<double> blob;
  std::ostringstream tensor_lines;
  for (const auto& [name, m] : tensors) {
    tensor_lines << name << " " << m.rows() << " " << m.cols() << " " << blob.size() << "\n";
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) blob.push_back(m(r, c));
    }
  }

  std::ostringstream man;
  man << "koopctl-checkpoint " << version << "\n";
  man << "kind " << kind << "\n";
  man << "blob " << blob_path.filename().string() << " " << blob.size() << "\n";
  man << "[config]\n" << config_text << "[/config]\n";
  man << "[scalars]\n";
  for (const auto& [n, v] : scalars) man << n << " " << v << "\n";
  man << "[/scalars]\n";
  man << "[rng]\n" << rng_text << "[/rng]\n";
  man << "[tensors]\n" << tensor_lines.str() << "[/tensors]\n";

  {
    std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint blob " + blob_path.string());
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint blob " + blob_path.string());
  }
  {
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint manifest " + manifest_path.string());
    out << man.str();
    if (!out) throw IoError("failed writing checkpoint manifest " + manifest_path.string());
  }
  return manifest_path;
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const auto stem = checkpoint_stem(path);
  auto manifest_path = stem;
  manifest_path += ".manifest";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint manifest " + manifest_path.string());

  Checkpoint ck;
  std::string line, word;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint manifest is empty");
  {
    std::istringstream ls(line);
    ls >> word >> ck.version;
    if (word != "koopctl-checkpoint" || !ls) throw CheckpointError("not a koopctl checkpoint: " + manifest_path.string());
    if (ck.version != kCheckpointVersion) {
      throw CheckpointError("checkpoint version " + std::to_string(ck.version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
  }
  if (!std::getline(in, line) || line.rfind("kind ", 0) != 0) throw CheckpointError("checkpoint manifest: missing kind");
  ck.kind = line.substr(5);

  std::string blob_name;
  std::size_t blob_count = 0;
  {
    if (!std::getline(in, line)) throw CheckpointError("checkpoint manifest: missing blob line");
    std::istringstream ls(line);
    ls >> word >> blob_name >> blob_count;
    if (word != "blob" || !ls) throw CheckpointError("checkpoint manifest: malformed blob line");
  }

  ck.config_text = read_section(in, "[config]", "[/config]");
  {
    std::istringstream ss(read_section(in, "[scalars]", "[/scalars]"));
    std::string name;
    long long v = 0;
    while (ss >> name >> v) ck.scalars.emplace_back(name, v);
    if (!ss.eof()) throw CheckpointError("checkpoint manifest: malformed scalar line");
  }
  ck.rng_text = read_section(in, "[rng]", "[/rng]");
  std::string tensor_text = read_section(in, "[tensors]", "[/tensors]");

  const auto blob_path = stem.parent_path() / blob_name;
  std::ifstream bin(blob_path, std::ios::binary | std::ios::ate);
  if (!bin) throw CheckpointError("cannot open checkpoint blob " + blob_path.string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes != blob_count * sizeof(double)) {
    throw CheckpointError("checkpoint blob has " + std::to_string(bytes) + " bytes, manifest expects " +
                          std::to_string(blob_count * sizeof(double)));
  }
  std::vector<double> blob(blob_count);
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));
  if (!bin) throw CheckpointError("failed reading checkpoint blob " + blob_path.string());

  std::istringstream ts(tensor_text);
  std::string name;
  long long rows = 0, cols = 0, offset = 0;
  while (ts >> name >> rows >> cols >> offset) {
    if (rows < 0 || cols < 0 || offset < 0 ||
        static_cast<std::size_t>(offset + rows * cols) > blob.size()) {
      throw CheckpointError("checkpoint tensor '" + name + "' lies outside the blob");
    }
    Matrix m(rows, cols);
    std::size_t k = static_cast<std::size_t>(offset);
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) m(r, c) = blob[k++];
    }
    ck.tensors.emplace_back(name, std::move(m));
  }
  if (!ts.eof()) throw CheckpointError("checkpoint manifest: malformed tensor line");
  return ck;
}

}  // namespace koopctl
