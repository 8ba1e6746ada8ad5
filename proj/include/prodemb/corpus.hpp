#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace prodemb {

enum class EventKind { Browse, AddToCart, Purchase };

std::string event_kind_name(EventKind k);
EventKind parse_event_kind(const std::string& s);

struct Product {
  std::string id;
  // (name, value) pairs in the catalog's canonical order: brand, gender,
  // color, pattern, style, type, category, then free-form extras.
  std::vector<std::pair<std::string, std::string>> attributes;

  std::optional<std::string> attribute(const std::string& name) const;
};

// Puts known attribute names into canonical order; extras keep their
// relative order after them.
void canonicalize_attributes(Product& p);

class Catalog {
 public:
  void add(Product p);  // throws on duplicate id or missing category/gender
  const Product& by_id(const std::string& id) const;
  const Product* find(const std::string& id) const;
  const std::vector<Product>& products() const { return products_; }
  size_t size() const { return products_.size(); }

 private:
  std::vector<Product> products_;
  std::unordered_map<std::string, size_t> index_;
};

struct SessionEvent {
  std::string product_id;
  uint64_t timestamp = 0;
  EventKind kind = EventKind::Browse;
};

struct Session {
  std::string user_id;
  std::vector<SessionEvent> events;  // kept sorted by timestamp

  void sort_events();
};

struct SessionParagraph {
  std::string text;
  std::vector<std::pair<size_t, size_t>> spans;  // [start, end) per product sentence
  std::vector<std::string> product_ids;
};

inline constexpr size_t kMinSessionProducts = 3;
inline constexpr size_t kMaxSessionProducts = 20;
inline constexpr const char* kSentenceSeparator = " . ";

// Attribute values joined by single spaces in canonical order.
std::string product_sentence(const Product& p);

// First kMaxSessionProducts products rendered and joined with the separator.
// Returns nullopt (a rejection, not a fault) for sessions with fewer than
// kMinSessionProducts products. Unknown product ids throw.
std::optional<SessionParagraph> session_paragraph(const Session& s, const Catalog& catalog);

struct SynthConfig {
  size_t n_products = 600;
  size_t n_sessions = 1000;
  size_t n_archetypes = 2;
  uint64_t seed = 1;
  size_t session_len_min = 2;
  size_t session_len_max = 30;
  // Mass placed on each archetype's focused attribute values.
  double archetype_focus_mass = 0.95;
  // Weight exponent on per-session attribute coherence; 0 disables it.
  double session_coherence = 1.2;
  // Ordered (attribute name, value vocabulary) pairs; must contain category
  // and gender.
  std::vector<std::pair<std::string, std::vector<std::string>>> attribute_vocabs;

  static SynthConfig defaults();
  void validate() const;
};

// One preference distribution per attribute, aligned with
// SynthConfig::attribute_vocabs. Each distribution sums to 1.
struct Archetype {
  std::vector<std::vector<double>> preferences;
};

std::vector<Archetype> build_archetypes(const SynthConfig& cfg);

// Per-archetype product weight: the product of attribute preference
// probabilities. Throws when an archetype matches no product.
std::vector<std::vector<double>> archetype_product_weights(
    const SynthConfig& cfg, const Catalog& catalog, const std::vector<Archetype>& archetypes);

struct SynthData {
  Catalog catalog;
  std::vector<Session> sessions;
  std::vector<size_t> session_archetype;
};

// Deterministic in cfg (including seed). Sessions are drawn per archetype and
// around a per-session focus product so co-browsed products share attribute
// values.
SynthData generate_synthetic(const SynthConfig& cfg);

// Deterministic shuffle-split; |train| = llround(fraction * n).
std::pair<std::vector<Session>, std::vector<Session>> split_sessions(
    const std::vector<Session>& sessions, double train_fraction, uint64_t seed);

// One product per line: id<TAB>name=value;name=value;...  UTF-8, LF.
void write_catalog(const Catalog& c, const std::string& path);
Catalog read_catalog(const std::string& path);

// One session per line: user_id<TAB>product_id:timestamp:kind,...
void write_sessions(const std::vector<Session>& sessions, const std::string& path);
std::vector<Session> read_sessions(const std::string& path);

// Paragraphs for every accepted session, in session order.
std::vector<SessionParagraph> build_paragraphs(const std::vector<Session>& sessions,
                                               const Catalog& catalog);

}  // namespace prodemb
