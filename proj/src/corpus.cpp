#include "prodemb/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "prodemb/rng.hpp"

namespace prodemb {

namespace {

const char* kCanonicalOrder[] = {"brand", "gender", "color", "pattern",
                                 "style", "type",   "category"};

int canonical_rank(const std::string& name) {
  for (size_t i = 0; i < std::size(kCanonicalOrder); ++i)
    if (name == kCanonicalOrder[i]) return static_cast<int>(i);
  return static_cast<int>(std::size(kCanonicalOrder));
}

}  // namespace

std::string event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Browse: return "browse";
    case EventKind::AddToCart: return "cart";
    case EventKind::Purchase: return "purchase";
  }
  return "browse";
}

EventKind parse_event_kind(const std::string& s) {
  if (s == "browse") return EventKind::Browse;
  if (s == "cart" || s == "add_to_cart") return EventKind::AddToCart;
  if (s == "purchase") return EventKind::Purchase;
  throw std::invalid_argument("unknown event kind '" + s + "'");
}

std::optional<std::string> Product::attribute(const std::string& name) const {
  for (const auto& [k, v] : attributes)
    if (k == name) return v;
  return std::nullopt;
}

void canonicalize_attributes(Product& p) {
  std::stable_sort(p.attributes.begin(), p.attributes.end(),
                   [](const auto& a, const auto& b) {
                     return canonical_rank(a.first) < canonical_rank(b.first);
                   });
}

void Catalog::add(Product p) {
  if (index_.count(p.id)) throw std::invalid_argument("duplicate product id '" + p.id + "'");
  if (!p.attribute("category"))
    throw std::invalid_argument("product '" + p.id + "' is missing attribute 'category'");
  if (!p.attribute("gender"))
    throw std::invalid_argument("product '" + p.id + "' is missing attribute 'gender'");
  canonicalize_attributes(p);
  index_.emplace(p.id, products_.size());
  products_.push_back(std::move(p));
}

const Product& Catalog::by_id(const std::string& id) const {
  const Product* p = find(id);
  if (!p) throw std::out_of_range("product id '" + id + "' not in catalog");
  return *p;
}

const Product* Catalog::find(const std::string& id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &products_[it->second];
}

void Session::sort_events() {
  std::stable_sort(events.begin(), events.end(),
                   [](const SessionEvent& a, const SessionEvent& b) {
                     return a.timestamp < b.timestamp;
                   });
}

std::string product_sentence(const Product& p) {
  std::string out;
  for (const auto& [name, value] : p.attributes) {
    if (!out.empty()) out += ' ';
    out += value;
  }
  return out;
}

std::optional<SessionParagraph> session_paragraph(const Session& s, const Catalog& catalog) {
  if (s.events.size() < kMinSessionProducts) return std::nullopt;
  SessionParagraph para;
  size_t n = std::min(s.events.size(), kMaxSessionProducts);
  for (size_t i = 0; i < n; ++i) {
    const Product& p = catalog.by_id(s.events[i].product_id);
    if (i) para.text += kSentenceSeparator;
    size_t start = para.text.size();
    para.text += product_sentence(p);
    para.spans.emplace_back(start, para.text.size());
    para.product_ids.push_back(p.id);
  }
  return para;
}

SynthConfig SynthConfig::defaults() {
  SynthConfig cfg;
  cfg.attribute_vocabs = {
      {"brand",
       {"Shoetopia", "Nortwind", "Verana", "Kistral", "Ombrelle", "Duskline", "Peltor",
        "Quillow", "Marcato", "Finchley", "Hexton", "Ravella"}},
      {"gender", {"Women", "Men", "Unisex"}},
      {"color",
       {"Beige", "Black", "White", "Red", "Blue", "Green", "Yellow", "Navy", "Maroon", "Olive"}},
      {"pattern", {"Solid", "Striped", "Printed", "Checked", "Floral", "ColourBlocked"}},
      {"style",
       {"PeepToe", "Slip", "Laced", "Cropped", "Oversized", "Fitted", "Relaxed", "Classic"}},
      {"type", {"Heel", "Sneaker", "Sandal", "Tshirt", "Shirt", "Jean", "Kurta", "Saree"}},
      {"category", {"Footwear", "Topwear", "Bottomwear", "Ethnic"}},
  };
  return cfg;
}

void SynthConfig::validate() const {
  if (n_products == 0 || n_sessions == 0 || n_archetypes == 0)
    throw std::invalid_argument("synth config: counts must be positive");
  if (session_len_min < 1 || session_len_max < session_len_min)
    throw std::invalid_argument("synth config: bad session length range");
  if (attribute_vocabs.empty())
    throw std::invalid_argument("synth config: attribute vocabularies required");
  bool has_cat = false, has_gender = false;
  for (const auto& [name, vocab] : attribute_vocabs) {
    if (vocab.empty())
      throw std::invalid_argument("synth config: empty vocabulary for attribute '" + name + "'");
    has_cat |= name == "category";
    has_gender |= name == "gender";
  }
  if (!has_cat || !has_gender)
    throw std::invalid_argument("synth config: category and gender attributes are required");
  if (archetype_focus_mass <= 0.0 || archetype_focus_mass > 1.0)
    throw std::invalid_argument("synth config: archetype_focus_mass must be in (0, 1]");
}

std::vector<Archetype> build_archetypes(const SynthConfig& cfg) {
  std::vector<Archetype> out(cfg.n_archetypes);
  for (size_t a = 0; a < cfg.n_archetypes; ++a) {
    Rng rng(derive_seed(cfg.seed, 0x41, a));
    Archetype& arch = out[a];
    arch.preferences.resize(cfg.attribute_vocabs.size());
    for (size_t ai = 0; ai < cfg.attribute_vocabs.size(); ++ai) {
      const auto& vocab = cfg.attribute_vocabs[ai].second;
      size_t m = vocab.size();
      size_t focus = std::max<size_t>(1, (m + cfg.n_archetypes - 1) / cfg.n_archetypes);
      auto picks = rng.sample_without_replacement(m, focus);
      std::vector<double> pref(m, 0.0);
      double rest = m > focus ? (1.0 - cfg.archetype_focus_mass) / static_cast<double>(m - focus)
                              : 0.0;
      for (double& p : pref) p = rest;
      double fm = (m > focus ? cfg.archetype_focus_mass : 1.0) / static_cast<double>(focus);
      for (size_t i : picks) pref[i] = fm;
      double total = 0.0;
      for (double p : pref) total += p;
      for (double& p : pref) p /= total;
      arch.preferences[ai] = std::move(pref);
    }
  }
  return out;
}

namespace {

size_t attribute_matches(const Product& a, const Product& b) {
  size_t n = std::min(a.attributes.size(), b.attributes.size());
  size_t hits = 0;
  for (size_t i = 0; i < n; ++i)
    if (a.attributes[i].second == b.attributes[i].second) ++hits;
  return hits;
}

std::string padded_id(const char* prefix, size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace

std::vector<std::vector<double>> archetype_product_weights(
    const SynthConfig& cfg, const Catalog& catalog, const std::vector<Archetype>& archetypes) {
  const auto& products = catalog.products();
  std::vector<std::vector<double>> arch_weights(archetypes.size());
  for (size_t a = 0; a < archetypes.size(); ++a) {
    arch_weights[a].resize(products.size());
    double total = 0.0;
    for (size_t i = 0; i < products.size(); ++i) {
      double w = 1.0;
      for (size_t ai = 0; ai < cfg.attribute_vocabs.size(); ++ai) {
        const auto& vocab = cfg.attribute_vocabs[ai].second;
        const std::string& val = products[i].attributes[ai].second;
        size_t vi = static_cast<size_t>(
            std::find(vocab.begin(), vocab.end(), val) - vocab.begin());
        w *= archetypes[a].preferences[ai][vi];
      }
      arch_weights[a][i] = w;
      total += w;
    }
    if (total <= 0.0)
      throw std::invalid_argument("synth config: archetype " + std::to_string(a) +
                                  " matches no product");
  }
  return arch_weights;
}

SynthData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  SynthData out;

  Rng prod_rng(derive_seed(cfg.seed, 0x50));
  for (size_t i = 0; i < cfg.n_products; ++i) {
    Product p;
    p.id = padded_id("p", i, 5);
    for (const auto& [name, vocab] : cfg.attribute_vocabs)
      p.attributes.emplace_back(name, vocab[prod_rng.below(vocab.size())]);
    out.catalog.add(std::move(p));
  }

  auto archetypes = build_archetypes(cfg);
  const auto& products = out.catalog.products();
  auto arch_weights = archetype_product_weights(cfg, out.catalog, archetypes);

  const uint64_t base_ts = 1600000000;  // fixed epoch anchor, keeps outputs stable
  for (size_t s = 0; s < cfg.n_sessions; ++s) {
    Rng rng(derive_seed(cfg.seed, 0x53, s));
    size_t a = s % cfg.n_archetypes;
    out.session_archetype.push_back(a);

    double arch_total = 0.0;
    for (double w : arch_weights[a]) arch_total += w;
    size_t focus = rng.weighted_index(arch_weights[a], arch_total);

    size_t len = static_cast<size_t>(rng.range(static_cast<int64_t>(cfg.session_len_min),
                                               static_cast<int64_t>(cfg.session_len_max)));
    std::vector<double> w(products.size());
    double w_total = 0.0;
    for (size_t i = 0; i < products.size(); ++i) {
      double coher = cfg.session_coherence *
                     static_cast<double>(attribute_matches(products[i], products[focus]));
      w[i] = arch_weights[a][i] * std::exp(coher);
      w_total += w[i];
    }

    Session sess;
    sess.user_id = padded_id("u", s, 6);
    uint64_t ts = base_ts + s * 3600;
    for (size_t e = 0; e < len; ++e) {
      size_t pi = rng.weighted_index(w, w_total);
      double r = rng.uniform01();
      EventKind kind = r < 0.80   ? EventKind::Browse
                       : r < 0.95 ? EventKind::AddToCart
                                  : EventKind::Purchase;
      ts += static_cast<uint64_t>(rng.range(10, 600));
      sess.events.push_back({products[pi].id, ts, kind});
    }
    out.sessions.push_back(std::move(sess));
  }
  return out;
}

std::pair<std::vector<Session>, std::vector<Session>> split_sessions(
    const std::vector<Session>& sessions, double train_fraction, uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: train_fraction must be in (0, 1)");
  std::vector<size_t> idx(sessions.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0x5b));
  rng.shuffle(idx);
  size_t n_train = static_cast<size_t>(
      std::llround(train_fraction * static_cast<double>(sessions.size())));
  n_train = std::min(n_train, sessions.size());
  std::pair<std::vector<Session>, std::vector<Session>> out;
  for (size_t i = 0; i < idx.size(); ++i)
    (i < n_train ? out.first : out.second).push_back(sessions[idx[i]]);
  return out;
}

void write_catalog(const Catalog& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const Product& p : c.products()) {
    f << p.id << '\t';
    for (size_t i = 0; i < p.attributes.size(); ++i) {
      if (i) f << ';';
      f << p.attributes[i].first << '=' << p.attributes[i].second;
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_str(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

[[noreturn]] void parse_fail(const std::string& path, size_t line, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Catalog read_catalog(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open catalog file '" + path + "'");
  Catalog c;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    auto fields = split_str(line, '\t');
    if (fields.size() != 2) parse_fail(path, ln, "expected id<TAB>attributes");
    Product p;
    p.id = fields[0];
    for (const std::string& kv : split_str(fields[1], ';')) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) parse_fail(path, ln, "bad attribute '" + kv + "'");
      p.attributes.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.add(std::move(p));
  }
  return c;
}

void write_sessions(const std::vector<Session>& sessions, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  for (const Session& s : sessions) {
    f << s.user_id << '\t';
    for (size_t i = 0; i < s.events.size(); ++i) {
      const SessionEvent& e = s.events[i];
      if (i) f << ',';
      f << e.product_id << ':' << e.timestamp << ':' << event_kind_name(e.kind);
    }
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Session> read_sessions(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open sessions file '" + path + "'");
  std::vector<Session> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(f, line)) {
    ++ln;
    if (line.empty()) continue;
    auto fields = split_str(line, '\t');
    if (fields.size() != 2) parse_fail(path, ln, "expected user_id<TAB>events");
    Session s;
    s.user_id = fields[0];
    for (const std::string& ev : split_str(fields[1], ',')) {
      auto parts = split_str(ev, ':');
      if (parts.size() != 3) parse_fail(path, ln, "bad event '" + ev + "'");
      SessionEvent e;
      e.product_id = parts[0];
      try {
        e.timestamp = std::stoull(parts[1]);
      } catch (const std::exception&) {
        parse_fail(path, ln, "bad timestamp '" + parts[1] + "'");
      }
      e.kind = parse_event_kind(parts[2]);
      s.events.push_back(std::move(e));
    }
    s.sort_events();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SessionParagraph> build_paragraphs(const std::vector<Session>& sessions,
                                               const Catalog& catalog) {
  std::vector<SessionParagraph> out;
  for (const Session& s : sessions)
    if (auto para = session_paragraph(s, catalog)) out.push_back(std::move(*para));
  return out;
}

}  // namespace prodemb
