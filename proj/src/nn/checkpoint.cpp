#include "priorflow/nn/checkpoint.hpp"

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"

namespace priorflow::nn {

namespace {
constexpr std::uint32_t kMagic = 0x4b434650;  // "PFCK"
constexpr std::uint32_t kVersion = 1;

void write_matrix(io::ByteWriter& w, const Matrix& m) {
  w.u64(static_cast<std::uint64_t>(m.rows()));
  w.u64(static_cast<std::uint64_t>(m.cols()));
  w.f64s({m.data(), static_cast<std::size_t>(m.size())});
}

Matrix read_matrix(io::ByteReader& r) {
  const std::uint64_t rows = r.u64();
  const std::uint64_t cols = r.u64();
  if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24) || rows * cols > r.remaining() / 8)
    r.fail("bad array shape");
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  r.f64s({m.data(), static_cast<std::size_t>(m.size())});
  return m;
}
}  // namespace

std::string Checkpoint::serialize() const {
  io::ByteWriter w;
  w.u32(kMagic);
  w.u32(kVersion);
  w.str(kind);
  w.str(meta.dump());
  w.i64(params.step());
  w.u64(params.size());
  for (const auto& e : params.entries()) {
    w.str(e.name);
    write_matrix(w, e.value);
    write_matrix(w, e.first_moment);
    write_matrix(w, e.second_moment);
  }
  w.u64(buffers.size());
  for (const auto& [name, m] : buffers) {
    w.str(name);
    write_matrix(w, m);
  }
  w.seal();
  return w.bytes();
}

Checkpoint Checkpoint::deserialize(std::string_view bytes, const std::string& what) {
  auto r = io::ByteReader::verified(bytes, what);
  if (r.u32() != kMagic) r.fail("not a checkpoint (bad magic)");
  if (r.u32() != kVersion) r.fail("unsupported checkpoint version");
  Checkpoint ck;
  ck.kind = r.str();
  try {
    ck.meta = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  }
  const std::int64_t step = r.i64();
  if (step < 0) r.fail("negative step counter");
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    Matrix value = read_matrix(r);
    Matrix m = read_matrix(r);
    Matrix v = read_matrix(r);
    if (m.rows() != value.rows() || m.cols() != value.cols() || v.rows() != value.rows() ||
        v.cols() != value.cols())
      r.fail("moment shape differs from parameter '" + name + "'");
    try {
      ck.params.add(name, std::move(value));
    } catch (const InvalidInput& e) {
      r.fail(e.what());
    }
    auto& entry = ck.params.entries_mut().back();
    entry.first_moment = std::move(m);
    entry.second_moment = std::move(v);
  }
  ck.params.set_step(step);
  const std::uint64_t nb = r.u64();
  for (std::uint64_t i = 0; i < nb; ++i) {
    std::string name = r.str();
    ck.buffers.emplace(std::move(name), read_matrix(r));
  }
  r.expect_end();
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("missing checkpoint: " + path.string());
  return deserialize(io::read_file(path), path.string());
}

}  // namespace priorflow::nn
