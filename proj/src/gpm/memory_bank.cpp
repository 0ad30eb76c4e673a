#include "priorflow/gpm/memory_bank.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "priorflow/common/binary_io.hpp"
#include "priorflow/common/errors.hpp"

namespace priorflow::gpm {

namespace {
constexpr std::uint32_t kMagic = 0x424d4650;  // "PFMB"
constexpr double kUnitNormTolerance = 1e-9;

double inner(const Vector& a, const Vector& b) {
  return std::inner_product(a.data(), a.data() + a.size(), b.data(), 0.0);
}
}  // namespace

MemoryBank::MemoryBank(BankLayout layout) : layout_(layout) {
  require(layout_.embed_dim > 0 && layout_.action_dim > 0, "MemoryBank: dims must be positive");
  require(layout_.window >= 1 && layout_.stride >= 1, "MemoryBank: window and stride must be >= 1");
}

void MemoryBank::insert(MemoryEntry entry) {
  require(entry.key.size() == layout_.embed_dim, "bank_insert: key dim mismatch");
  require(entry.key.allFinite() && std::abs(entry.key.norm() - 1.0) <= kUnitNormTolerance,
          "bank_insert: key must be unit-norm");
  require(entry.trajectory.cols() == layout_.action_dim, "bank_insert: action dim mismatch");
  require(entry.trajectory.allFinite(), "bank_insert: trajectory has non-finite entries");
  require(entry.window == layout_.window && entry.stride == layout_.stride,
          "bank_insert: chunking parameters differ from the bank's");
  require(entry.length() >= entry.window, "bank_insert: trajectory shorter than the window (T < H0)");
  require(entry.task_id.size() < (1u << 16), "bank_insert: task id too long");
  entries_.push_back(std::move(entry));
}

std::vector<RetrievalHit> MemoryBank::retrieve_topk(const TaskEmbedding& query, std::size_t k,
                                                    std::optional<std::size_t> exclude,
                                                    CallCounters* counters) const {
  require(!entries_.empty(), "retrieve_topk: bank is empty");
  require(query.size() == layout_.embed_dim, "retrieve_topk: query dim mismatch");
  const std::size_t skip = exclude.value_or(entries_.size());
  const std::size_t available = entries_.size() - (skip < entries_.size() ? 1 : 0);
  require(k >= 1 && k <= available, "retrieve_topk: k must be in [1, bank size]");
  if (counters) ++counters->retrievals;

  std::vector<RetrievalHit> all;
  all.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i == skip) continue;
    all.push_back({i, inner(query, entries_[i].key)});
  }
  const auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.score > b.score || (a.score == b.score && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

std::string MemoryBank::serialize() const {
  io::ByteWriter w;
  w.u32(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(layout_.embed_dim));
  w.u32(static_cast<std::uint32_t>(layout_.action_dim));
  w.u32(static_cast<std::uint32_t>(layout_.window));
  w.u32(static_cast<std::uint32_t>(layout_.stride));
  w.u64(entries_.size());
  for (const auto& e : entries_) {
    w.f64s({e.key.data(), static_cast<std::size_t>(e.key.size())});
    w.u32(static_cast<std::uint32_t>(e.length()));
    w.str(e.task_id);
    w.f64s({e.trajectory.data(), static_cast<std::size_t>(e.trajectory.size())});
  }
  w.seal();
  return w.bytes();
}

MemoryBank MemoryBank::deserialize(std::string_view bytes, const std::string& what) {
  auto r = io::ByteReader::verified(bytes, what);
  if (r.u32() != kMagic) r.fail("not a memory bank (bad magic)");
  if (r.u32() != kFormatVersion) r.fail("unsupported memory bank version");
  BankLayout layout;
  layout.embed_dim = static_cast<int>(r.u32());
  layout.action_dim = static_cast<int>(r.u32());
  layout.window = static_cast<int>(r.u32());
  layout.stride = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  if (layout.embed_dim <= 0 || layout.action_dim <= 0 || layout.window <= 0 || layout.stride <= 0 ||
      layout.embed_dim > (1 << 20) || layout.action_dim > (1 << 20))
    r.fail("bad header");
  MemoryBank bank(layout);
  for (std::uint64_t i = 0; i < count; ++i) {
    MemoryEntry e;
    e.key.resize(layout.embed_dim);
    r.f64s({e.key.data(), static_cast<std::size_t>(e.key.size())});
    const std::uint32_t t = r.u32();
    e.task_id = r.str();
    if (t == 0 || static_cast<std::uint64_t>(t) * layout.action_dim > r.remaining() / 8) r.fail("bad trajectory length");
    e.trajectory.resize(t, layout.action_dim);
    r.f64s({e.trajectory.data(), static_cast<std::size_t>(e.trajectory.size())});
    e.window = layout.window;
    e.stride = layout.stride;
    try {
      bank.insert(std::move(e));
    } catch (const InvalidInput& err) {
      r.fail(std::string("entry ") + std::to_string(i) + ": " + err.what());
    }
  }
  r.expect_end();
  return bank;
}

void MemoryBank::save(const std::filesystem::path& path) const { io::write_file(path, serialize()); }

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifact("missing memory bank: " + path.string());
  return deserialize(io::read_file(path), path.string());
}

bool MemoryBank::operator==(const MemoryBank& other) const {
  if (layout_.embed_dim != other.layout_.embed_dim || layout_.action_dim != other.layout_.action_dim ||
      layout_.window != other.layout_.window || layout_.stride != other.layout_.stride ||
      entries_.size() != other.entries_.size())
    return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.task_id != b.task_id || a.key != b.key || a.trajectory.rows() != b.trajectory.rows() ||
        a.trajectory != b.trajectory)
      return false;
  }
  return true;
}

BankSummary summarize(const MemoryBank& bank, double norm_tolerance) {
  BankSummary s;
  s.entries = bank.size();
  s.embed_dim = bank.layout().embed_dim;
  s.action_dim = bank.layout().action_dim;
  s.window = bank.layout().window;
  s.stride = bank.layout().stride;
  for (const auto& e : bank.entries()) {
    ++s.per_task[e.task_id];
    s.max_norm_error = std::max(s.max_norm_error, std::abs(e.key.norm() - 1.0));
  }
  s.keys_unit_norm = s.max_norm_error <= norm_tolerance;
  return s;
}

}  // namespace priorflow::gpm
