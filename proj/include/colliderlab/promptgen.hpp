#pragma once

// Structure-matched prompt rendering for every (domain, task, condition)
// cell. Domain wording lives in plain-text data files with named slots; the
// code only fixes the scaffold order and the seeded manipulations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "colliderlab/collider.hpp"
#include "colliderlab/judgment.hpp"

namespace colliderlab {

/// Unknown slot, missing key or malformed data file. The message names the
/// file (or template key) and the slot.
class TemplateError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A manipulation was requested that the inputs cannot support.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct VariableSpec {
  std::string name;
  std::string on;   ///< value label for state 1
  std::string off;  ///< value label for state 0
  std::string verb = "causes";  ///< agrees with the name in the link sentences
  std::string detail;
  std::string mechanism;  ///< may be empty
};

/// One cover story. Links and closing are templates over the slots {C1},
/// {C2}, {E}, {X.on}, {X.off}, {X.verb} and {unit}; link i runs from cause i to E.
struct DomainSpec {
  std::string name;
  std::string unit;
  std::string intro;
  std::array<VariableSpec, 3> variables;  ///< C1, C2, E
  std::array<std::string, 2> links;
  std::string closing;
  std::optional<std::string> origin;  ///< story an abstract variant came from
  std::vector<std::pair<std::string, std::string>> identifier_map;  ///< original -> placeholder

  bool is_abstract() const { return name == "abstract"; }
  const VariableSpec &variable(Variable v) const;
  /// Throws TemplateError on empty fields, duplicate names, links that do
  /// not connect their cause to E, or a closing sentence that does not
  /// assert independent sufficiency.
  void validate() const;

  static DomainSpec parse(std::string_view text, std::string_view source);
};

struct Scaffold {
  std::string abstract_intro;
  std::string abstract_unit;
  std::string variable;
  std::string relations_header;
  std::string observe_prefix;
  std::string observe_item;
  std::string question;
  std::string instruction_direct;
  std::string instruction_cot;

  static Scaffold parse(std::string_view text, std::string_view source);
};

struct Line {
  std::string prefix;
  std::vector<std::string> sentences;
};

struct Section {
  std::string name;
  std::vector<Line> lines;
};

struct LineRef {
  std::size_t section = 0;
  std::size_t line = 0;
};

/// Sections in scaffold order: intro, variables, relations, observations,
/// question. Text joins sections with a blank line, lines with a newline and
/// sentences with a space.
struct PromptParts {
  std::vector<Section> sections;
  /// Insertion points for noise, in the order they are filled: after the C1
  /// description, first causal bullet, second causal bullet, after the C2
  /// description, after the E description.
  std::array<LineRef, 5> noise_slots{};

  std::string text() const;
  std::vector<std::string> flat_sentences() const;
};

enum class NoiseSource : std::uint8_t { Lorem, CrossDomain };

struct NoiseSentence {
  std::string id;
  std::string text;
};

struct OverloadResult {
  PromptParts parts;
  std::vector<std::string> injected_ids;
};

/// Appends `count` seeded picks from `corpus` to the noise slots. Picks are
/// without replacement until the corpus is exhausted. count 0 returns the
/// input unchanged; an empty corpus with count > 0 is a ConfigError.
OverloadResult overload(const PromptParts &parts, std::span<const NoiseSentence> corpus,
                        int count, std::uint64_t seed);

/// Returns a placeholder for draw number k.
using IdentifierSource = std::function<std::string(std::uint64_t draw)>;

/// Seeded 10-character [A-Za-z0-9] identifier.
std::string random_identifier(std::uint64_t seed);

/// Replaces variable names with distinct random identifiers, the unit with
/// the scaffold's abstract unit and the intro with the abstract intro.
/// Detail and mechanism sentences are dropped because they carry the
/// original names. Throws GenerationError if 100 draws yield no three
/// distinct identifiers.
DomainSpec abstractify(const DomainSpec &domain, std::uint64_t seed, const Scaffold &scaffold,
                       const IdentifierSource &source = {});

/// Base-load rendering of one query.
PromptParts render_parts(const DomainSpec &domain, const Scaffold &scaffold,
                         const TaskQuery &task, Style style);

class PromptLibrary {
public:
  /// Reads scaffold.txt, domains/*.txt and noise/lorem.txt below `dir`.
  static PromptLibrary load(const std::filesystem::path &dir);
  /// $COLLIDERLAB_DATA if set, otherwise the source tree's data directory.
  static PromptLibrary load_default();

  const DomainSpec &domain(std::string_view name) const;
  std::vector<std::string> domain_names() const;
  const Scaffold &scaffold() const { return scaffold_; }
  std::span<const NoiseSentence> lorem() const { return lorem_; }

  /// Cross-domain noise is every detail and mechanism sentence of the other
  /// stories; for an abstract target the excluded story is its origin.
  std::vector<NoiseSentence> noise_corpus(NoiseSource source, const DomainSpec &target) const;

  /// SHA-256 per data file (relative path -> digest) and over all of them.
  const std::map<std::string, std::string> &file_hashes() const { return file_hashes_; }
  std::string content_hash() const;

private:
  Scaffold scaffold_;
  std::map<std::string, DomainSpec, std::less<>> domains_;
  std::vector<NoiseSentence> lorem_;
  std::map<std::string, std::string> file_hashes_;
};

struct RenderOptions {
  int noise_sentences = 2;
  NoiseSource rw17_noise = NoiseSource::CrossDomain;
  NoiseSource abstract_noise = NoiseSource::Lorem;
};

struct PromptInstance {
  std::string text;
  std::string domain;  ///< cover story, also for abstract variants
  TaskQuery task;
  Condition condition;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> identifier_map;
  std::vector<std::string> injected_noise_ids;
  PromptParts parts;
};

/// Deterministic in (domain, task, condition, seed, options).
PromptInstance render(const PromptLibrary &library, std::string_view domain,
                      const TaskQuery &task, const Condition &condition, std::uint64_t seed,
                      const RenderOptions &options = {});

/// Load does not enter the seed, so an overloaded instance extends the base
/// instance of the same cell.
std::uint64_t instance_seed(std::uint64_t master, std::string_view domain, TaskId task,
                            const Condition &condition);

/// Conditions outermost, then domains, then tasks in benchmark order.
std::vector<PromptInstance> generate_suite(const PromptLibrary &library,
                                           std::span<const std::string> domains,
                                           std::span<const Condition> conditions,
                                           std::uint64_t master_seed,
                                           const RenderOptions &options = {});
std::vector<PromptInstance> generate_suite(const PromptLibrary &library,
                                           std::uint64_t master_seed,
                                           const RenderOptions &options = {});

}  // namespace colliderlab
