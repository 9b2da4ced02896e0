#include "colliderlab/promptgen.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "colliderlab/hash.hpp"
#include "colliderlab/rng.hpp"

namespace colliderlab {

namespace {

constexpr std::array<Variable, 3> kVariables = {Variable::C1, Variable::C2, Variable::E};
constexpr std::string_view kClosingMarker = "can independently bring about";

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

using KeyValues = std::map<std::string, std::string, std::less<>>;

KeyValues parse_key_values(std::string_view text, std::string_view source) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw TemplateError(std::string(source) + ":" + std::to_string(line_no) +
                          ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw TemplateError(std::string(source) + ":" + std::to_string(line_no) +
                          ": duplicate key '" + key + "'");
    }
  }
  return out;
}

std::string required(const KeyValues &kv, std::string_view key, std::string_view source) {
  const auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) {
    throw TemplateError(std::string(source) + ": missing key '" + std::string(key) + "'");
  }
  return it->second;
}

std::string optional_value(const KeyValues &kv, std::string_view key) {
  const auto it = kv.find(key);
  return it == kv.end() ? std::string{} : it->second;
}

std::string_view variable_key(Variable v) { return to_string(v); }

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

using Resolver = std::function<std::optional<std::string>(std::string_view slot)>;

/// Expands {slot} and {slot|cap}; `where` names the template in errors.
std::string fill(std::string_view tmpl, const Resolver &resolve, std::string_view where) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) {
      throw TemplateError(std::string(where) + ": unterminated slot");
    }
    std::string_view slot = tmpl.substr(open + 1, close - open - 1);
    bool cap = false;
    if (const auto bar = slot.find('|'); bar != std::string_view::npos) {
      if (slot.substr(bar + 1) != "cap") {
        throw TemplateError(std::string(where) + ": unknown modifier in slot '" +
                            std::string(slot) + "'");
      }
      cap = true;
      slot = slot.substr(0, bar);
    }
    auto value = resolve(slot);
    if (!value) {
      throw TemplateError(std::string(where) + ": missing slot '" + std::string(slot) + "'");
    }
    out.append(cap ? capitalize(std::move(*value)) : *value);
    pos = close + 1;
  }
  return out;
}

std::optional<std::string> variable_slot(const VariableSpec &v, std::string_view field) {
  if (field.empty()) return v.name;
  if (field == ".on") return v.on;
  if (field == ".off") return v.off;
  if (field == ".verb") return v.verb;
  return std::nullopt;
}

Resolver domain_resolver(const DomainSpec &d) {
  return [&d](std::string_view slot) -> std::optional<std::string> {
    if (slot == "unit") return d.unit;
    for (Variable v : kVariables) {
      const auto key = variable_key(v);
      if (slot.substr(0, key.size()) == key &&
          (slot.size() == key.size() || slot[key.size()] == '.')) {
        return variable_slot(d.variable(v), slot.substr(key.size()));
      }
    }
    return std::nullopt;
  };
}

/// Domain slots plus {V...} bound to `bound` and {V.state}/{T.state} bound to
/// `state`.
Resolver bound_resolver(const DomainSpec &d, std::string_view name, Variable bound,
                        std::optional<bool> state) {
  return [&d, name, bound, state, base = domain_resolver(d)](
             std::string_view slot) -> std::optional<std::string> {
    if (slot.substr(0, name.size()) == name &&
        (slot.size() == name.size() || slot[name.size()] == '.')) {
      const auto field = slot.substr(name.size());
      const VariableSpec &v = d.variable(bound);
      if (field == ".state") {
        if (!state) return std::nullopt;
        return *state ? v.on : v.off;
      }
      return variable_slot(v, field);
    }
    return base(slot);
  };
}

std::string join_items(const std::vector<std::string> &items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += items.size() == 2 ? " and " : (i + 1 == items.size() ? ", and " : ", ");
    out += items[i];
  }
  return out;
}

std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw TemplateError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const VariableSpec &DomainSpec::variable(Variable v) const {
  return variables[static_cast<std::size_t>(v)];
}

void DomainSpec::validate() const {
  const std::string where = "domain '" + name + "'";
  if (name.empty() || unit.empty() || intro.empty() || closing.empty()) {
    throw TemplateError(where + ": empty name, unit, intro or closing");
  }
  std::set<std::string> names;
  for (Variable v : kVariables) {
    const VariableSpec &s = variable(v);
    if (s.name.empty() || s.on.empty() || s.off.empty()) {
      throw TemplateError(where + ": variable " + std::string(to_string(v)) +
                          " needs a name and two value labels");
    }
    if (!names.insert(s.name).second) {
      throw TemplateError(where + ": duplicate variable name '" + s.name + "'");
    }
  }
  const std::array<std::string_view, 2> causes = {"{C1", "{C2"};
  for (std::size_t i = 0; i < links.size(); ++i) {
    const std::string_view other = causes[1 - i];
    if (links[i].find(causes[i]) == std::string::npos || links[i].find("{E") == std::string::npos ||
        links[i].find(other) != std::string::npos) {
      throw TemplateError(where + ": link" + std::to_string(i + 1) + " must connect " +
                          std::string(causes[i].substr(1)) + " to E");
    }
  }
  if (closing.find(kClosingMarker) == std::string::npos ||
      closing.find("{C1") == std::string::npos || closing.find("{C2") == std::string::npos) {
    throw TemplateError(where + ": closing sentence must state that both causes " +
                        std::string(kClosingMarker) + " E");
  }
  // Every template must expand against this spec.
  const auto resolve = domain_resolver(*this);
  fill(intro, resolve, where + " intro");
  fill(links[0], resolve, where + " link1");
  fill(links[1], resolve, where + " link2");
  fill(closing, resolve, where + " closing");
}

DomainSpec DomainSpec::parse(std::string_view text, std::string_view source) {
  const KeyValues kv = parse_key_values(text, source);
  DomainSpec d;
  d.name = required(kv, "name", source);
  d.unit = required(kv, "unit", source);
  d.intro = required(kv, "intro", source);
  for (Variable v : kVariables) {
    const std::string k(variable_key(v));
    VariableSpec &s = d.variables[static_cast<std::size_t>(v)];
    s.name = required(kv, k, source);
    s.on = required(kv, k + ".on", source);
    s.off = required(kv, k + ".off", source);
    s.detail = required(kv, k + ".detail", source);
    s.mechanism = optional_value(kv, k + ".mechanism");
    if (auto verb = optional_value(kv, k + ".verb"); !verb.empty()) s.verb = std::move(verb);
  }
  d.links = {required(kv, "link1", source), required(kv, "link2", source)};
  d.closing = required(kv, "closing", source);
  d.validate();
  return d;
}

Scaffold Scaffold::parse(std::string_view text, std::string_view source) {
  const KeyValues kv = parse_key_values(text, source);
  Scaffold s;
  s.abstract_intro = required(kv, "abstract.intro", source);
  s.abstract_unit = required(kv, "abstract.unit", source);
  s.variable = required(kv, "variable", source);
  s.relations_header = required(kv, "relations.header", source);
  s.observe_prefix = required(kv, "observe.prefix", source);
  s.observe_item = required(kv, "observe.item", source);
  s.question = required(kv, "question", source);
  s.instruction_direct = required(kv, "instruction.direct", source);
  s.instruction_cot = required(kv, "instruction.cot", source);
  return s;
}

std::string PromptParts::text() const {
  std::string out;
  for (std::size_t s = 0; s < sections.size(); ++s) {
    if (s > 0) out += "\n\n";
    const auto &lines = sections[s].lines;
    for (std::size_t l = 0; l < lines.size(); ++l) {
      if (l > 0) out += '\n';
      out += lines[l].prefix;
      for (std::size_t k = 0; k < lines[l].sentences.size(); ++k) {
        if (k > 0) out += ' ';
        out += lines[l].sentences[k];
      }
    }
  }
  return out;
}

std::vector<std::string> PromptParts::flat_sentences() const {
  std::vector<std::string> out;
  for (const auto &s : sections) {
    for (const auto &l : s.lines) out.insert(out.end(), l.sentences.begin(), l.sentences.end());
  }
  return out;
}

OverloadResult overload(const PromptParts &parts, std::span<const NoiseSentence> corpus,
                        int count, std::uint64_t seed) {
  if (count < 0) throw ConfigError("noise sentence count must be non-negative");
  OverloadResult out{parts, {}};
  if (count == 0) return out;
  if (corpus.empty()) throw ConfigError("noise corpus is empty");

  std::vector<std::size_t> order;
  std::uint64_t draw = 0;
  for (int k = 0; k < count; ++k) {
    if (order.empty()) {
      order.resize(corpus.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = stream_seed(seed, draw++) % i;
        std::swap(order[i - 1], order[j]);
      }
      std::reverse(order.begin(), order.end());
    }
    const NoiseSentence &pick = corpus[order.back()];
    order.pop_back();
    const LineRef at = parts.noise_slots[static_cast<std::size_t>(k) % parts.noise_slots.size()];
    out.parts.sections.at(at.section).lines.at(at.line).sentences.push_back(pick.text);
    out.injected_ids.push_back(pick.id);
  }
  return out;
}

std::string random_identifier(std::uint64_t seed) {
  static constexpr std::string_view kAlphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  std::string id(10, ' ');
  for (std::size_t i = 0; i < id.size(); ++i) {
    id[i] = kAlphabet[stream_seed(seed, i) % kAlphabet.size()];
  }
  return id;
}

DomainSpec abstractify(const DomainSpec &domain, std::uint64_t seed, const Scaffold &scaffold,
                       const IdentifierSource &source) {
  if (domain.is_abstract()) throw ConfigError("abstractify needs a concrete cover story");
  constexpr std::uint64_t kMaxDraws = 100;
  const IdentifierSource draw_id =
      source ? source : [seed](std::uint64_t k) { return random_identifier(stream_seed(seed, k)); };

  std::vector<std::string> ids;
  std::uint64_t draws = 0;
  while (ids.size() < kVariables.size()) {
    if (draws == kMaxDraws) {
      throw GenerationError("no three distinct identifiers after " + std::to_string(kMaxDraws) +
                            " draws");
    }
    std::string id = draw_id(draws++);
    const bool clash = std::find(ids.begin(), ids.end(), id) != ids.end() ||
                       std::any_of(domain.variables.begin(), domain.variables.end(),
                                   [&](const VariableSpec &v) { return v.name == id; });
    if (!clash) ids.push_back(std::move(id));
  }

  DomainSpec out = domain;
  out.origin = domain.name;
  out.name = "abstract";
  out.unit = scaffold.abstract_unit;
  out.intro = scaffold.abstract_intro;
  out.identifier_map.clear();
  for (std::size_t i = 0; i < out.variables.size(); ++i) {
    out.identifier_map.emplace_back(domain.variables[i].name, ids[i]);
    out.variables[i].name = ids[i];
    out.variables[i].verb = VariableSpec{}.verb;  // identifiers read as singular
    out.variables[i].detail.clear();
    out.variables[i].mechanism.clear();
  }
  out.validate();
  return out;
}

PromptParts render_parts(const DomainSpec &domain, const Scaffold &scaffold,
                         const TaskQuery &task, Style style) {
  task.validate();
  const std::string where = "domain '" + domain.name + "'";
  const Resolver base = domain_resolver(domain);
  PromptParts p;

  p.sections.push_back({"intro", {Line{"", {fill(domain.intro, base, where + " intro")}}}});

  Section vars{"variables", {}};
  for (Variable v : kVariables) {
    vars.lines.push_back(
        {"", {fill(scaffold.variable, bound_resolver(domain, "V", v, std::nullopt), "variable")}});
  }
  p.sections.push_back(std::move(vars));

  Section rel{"relations", {}};
  rel.lines.push_back({"", {scaffold.relations_header}});
  rel.lines.push_back({"- ", {fill(domain.links[0], base, where + " link1")}});
  rel.lines.push_back({"- ", {fill(domain.links[1], base, where + " link2")}});
  rel.lines.push_back({"", {fill(domain.closing, base, where + " closing")}});
  p.sections.push_back(std::move(rel));

  std::vector<std::string> items;
  for (Variable v : {Variable::E, Variable::C1, Variable::C2}) {
    const Observation o = task.given.of(v);
    if (o == Observation::Unobserved) continue;
    items.push_back(fill(scaffold.observe_item,
                         bound_resolver(domain, "V", v, o == Observation::On), "observe.item"));
  }
  if (items.empty()) throw std::invalid_argument("task " + describe(task) + " observes nothing");
  p.sections.push_back({"observations", {Line{"", {scaffold.observe_prefix + " " +
                                                   join_items(items) + "."}}}});

  const std::string question = fill(
      scaffold.question, bound_resolver(domain, "T", task.target, task.target_value), "question");
  p.sections.push_back(
      {"question",
       {Line{"", {question, style == Style::Cot ? scaffold.instruction_cot
                                                : scaffold.instruction_direct}}}});

  p.noise_slots = {LineRef{1, 0}, LineRef{2, 1}, LineRef{2, 2}, LineRef{1, 1}, LineRef{1, 2}};
  return p;
}

PromptLibrary PromptLibrary::load(const std::filesystem::path &dir) {
  namespace fs = std::filesystem;
  PromptLibrary lib;
  auto read = [&](const fs::path &rel) {
    std::string bytes = read_file(dir / rel);
    lib.file_hashes_[rel.generic_string()] = sha256_hex(bytes);
    return bytes;
  };

  lib.scaffold_ = Scaffold::parse(read("scaffold.txt"), "scaffold.txt");

  const fs::path domains = dir / "domains";
  if (!fs::is_directory(domains)) throw TemplateError("missing directory " + domains.string());
  std::vector<fs::path> files;
  for (const auto &entry : fs::directory_iterator(domains)) {
    if (entry.path().extension() == ".txt") files.push_back(entry.path().filename());
  }
  std::sort(files.begin(), files.end());
  for (const auto &f : files) {
    const fs::path rel = fs::path("domains") / f;
    DomainSpec d = DomainSpec::parse(read(rel), rel.generic_string());
    if (d.name != f.stem().string()) {
      throw TemplateError(rel.generic_string() + ": name '" + d.name +
                          "' does not match file name");
    }
    lib.domains_.emplace(d.name, std::move(d));
  }
  if (lib.domains_.empty()) throw TemplateError("no domain files in " + domains.string());

  const std::string lorem = read(fs::path("noise") / "lorem.txt");
  std::istringstream in(lorem);
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    lib.lorem_.push_back({"lorem:" + std::to_string(n), std::string(t)});
  }
  return lib;
}

PromptLibrary PromptLibrary::load_default() {
  if (const char *env = std::getenv("COLLIDERLAB_DATA"); env != nullptr && *env != '\0') {
    return load(env);
  }
  return load(COLLIDERLAB_DATA_DIR);
}

const DomainSpec &PromptLibrary::domain(std::string_view name) const {
  const auto it = domains_.find(name);
  if (it == domains_.end()) throw ConfigError("unknown domain '" + std::string(name) + "'");
  return it->second;
}

std::vector<std::string> PromptLibrary::domain_names() const {
  std::vector<std::string> out;
  for (const auto &[name, d] : domains_) out.push_back(name);
  return out;
}

std::vector<NoiseSentence> PromptLibrary::noise_corpus(NoiseSource source,
                                                       const DomainSpec &target) const {
  if (source == NoiseSource::Lorem) return lorem_;
  if (target.is_abstract() && !target.origin) {
    throw ConfigError("cross-domain noise for an abstract prompt needs its origin story");
  }
  const std::string &own = target.is_abstract() ? *target.origin : target.name;
  std::vector<NoiseSentence> out;
  for (const auto &[name, d] : domains_) {
    if (name == own) continue;
    for (Variable v : kVariables) {
      const VariableSpec &s = d.variable(v);
      const std::string prefix = name + ":" + std::string(variable_key(v));
      out.push_back({prefix + ".detail", s.detail});
      if (!s.mechanism.empty()) out.push_back({prefix + ".mechanism", s.mechanism});
    }
  }
  return out;
}

std::string PromptLibrary::content_hash() const {
  std::string all;
  for (const auto &[path, digest] : file_hashes_) all += path + " " + digest + "\n";
  return sha256_hex(all);
}

PromptInstance render(const PromptLibrary &library, std::string_view domain,
                      const TaskQuery &task, const Condition &condition, std::uint64_t seed,
                      const RenderOptions &options) {
  const DomainSpec &story = library.domain(domain);
  const bool abstract = condition.content == Content::Abstract;
  const DomainSpec spec = abstract ? abstractify(story, stream_seed(seed, 1), library.scaffold())
                                   : story;

  PromptInstance out;
  out.domain = std::string(domain);
  out.task = task;
  out.condition = condition;
  out.seed = seed;
  out.identifier_map = spec.identifier_map;
  out.parts = render_parts(spec, library.scaffold(), task, condition.style);
  if (condition.load == Load::Overloaded) {
    const auto corpus =
        library.noise_corpus(abstract ? options.abstract_noise : options.rw17_noise, spec);
    auto r = overload(out.parts, corpus, options.noise_sentences, stream_seed(seed, 2));
    out.parts = std::move(r.parts);
    out.injected_noise_ids = std::move(r.injected_ids);
  }
  out.text = out.parts.text();
  return out;
}

std::uint64_t instance_seed(std::uint64_t master, std::string_view domain, TaskId task,
                            const Condition &condition) {
  std::uint64_t s = stream_seed(master, fnv1a(domain));
  s = stream_seed(s, static_cast<std::uint64_t>(task_index(task)));
  return stream_seed(s, static_cast<std::uint64_t>(condition.content) * 2 +
                            static_cast<std::uint64_t>(condition.style));
}

std::vector<PromptInstance> generate_suite(const PromptLibrary &library,
                                           std::span<const std::string> domains,
                                           std::span<const Condition> conditions,
                                           std::uint64_t master_seed,
                                           const RenderOptions &options) {
  std::vector<PromptInstance> out;
  out.reserve(domains.size() * conditions.size() * kTaskCount);
  for (const Condition &c : conditions) {
    for (const std::string &d : domains) {
      for (const TaskQuery &t : rw17_task_set()) {
        out.push_back(render(library, d, t, c, instance_seed(master_seed, d, t.id, c), options));
      }
    }
  }
  return out;
}

std::vector<PromptInstance> generate_suite(const PromptLibrary &library,
                                           std::uint64_t master_seed,
                                           const RenderOptions &options) {
  const std::vector<std::string> domains(kStoryDomains.begin(), kStoryDomains.end());
  return generate_suite(library, domains, Condition::all(), master_seed, options);
}

}  // namespace colliderlab
