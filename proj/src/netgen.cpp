#include "epiforge/netgen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "epiforge/errors.hpp"
#include "epiforge/io.hpp"

namespace epiforge::net {

double WeightDist::sample(Rng& rng) const {
    return kind == Kind::Constant ? lo : rng.uniform(lo, hi);
}

void WeightDist::validate(const std::string& label) const {
    if (kind == Kind::Constant) {
        if (lo <= 0) throw ConfigError(label + ": constant weight must be positive");
    } else {
        if (lo <= 0 || hi <= lo) throw ConfigError(label + ": uniform weight needs 0 < lo < hi");
    }
}

std::int64_t NetworkConfig::total_population() const {
    std::int64_t total = 0;
    for (auto s : county_sizes) total += s;
    return total;
}

void NetworkConfig::validate() const {
    if (county_sizes.empty()) throw ConfigError("network config: at least one county required");
    for (std::size_t c = 0; c < county_sizes.size(); ++c)
        if (county_sizes[c] < 1)
            throw ConfigError("network config: county " + std::to_string(c) + " has size " +
                              std::to_string(county_sizes[c]) + ", must be >= 1");
    if (mean_household_size < 1) throw ConfigError("network config: mean_household_size must be >= 1");
    if (mean_external_degree < 0) throw ConfigError("network config: mean_external_degree must be >= 0");
    if (cross_county_mix < 0 || cross_county_mix > 1)
        throw ConfigError("network config: cross_county_mix must be in [0,1]");
    household_weight.validate("household_weight");
    external_weight.validate("external_weight");
}

std::string NetworkConfig::canonical_string() const {
    std::ostringstream out;
    out << "sizes=";
    for (std::size_t i = 0; i < county_sizes.size(); ++i)
        out << (i ? "," : "") << county_sizes[i];
    auto wd = [](const WeightDist& w) {
        return std::string(w.kind == WeightDist::Kind::Constant ? "c:" : "u:") +
               io::format_double(w.lo) + ":" + io::format_double(w.hi);
    };
    out << ";hh=" << io::format_double(mean_household_size)
        << ";ext=" << io::format_double(mean_external_degree)
        << ";mix=" << io::format_double(cross_county_mix)
        << ";hw=" << wd(household_weight) << ";xw=" << wd(external_weight);
    return out.str();
}

std::uint64_t config_hash(const NetworkConfig& config, std::uint64_t seed) {
    return io::fnv1a(config.canonical_string() + ";seed=" + std::to_string(seed));
}

ContactNetwork::ContactNetwork(std::vector<Person> persons, std::vector<ContactEdge> edges, int counties)
    : persons_(std::move(persons)), edges_(std::move(edges)), county_populations_(counties, 0) {
    const auto n = static_cast<std::int64_t>(persons_.size());
    for (const auto& p : persons_) {
        if (p.county < 0 || p.county >= counties)
            throw DataError("person " + std::to_string(p.id) + " has invalid county " +
                            std::to_string(p.county));
        ++county_populations_[p.county];
    }
    std::vector<std::int64_t> degree(n, 0);
    for (const auto& e : edges_) {
        if (e.u < 0 || e.u >= n || e.v < 0 || e.v >= n || e.u == e.v)
            throw DataError("edge with invalid endpoints (" + std::to_string(e.u) + "," +
                            std::to_string(e.v) + ")");
        ++degree[e.u];
        ++degree[e.v];
    }
    adj_offsets_.assign(n + 1, 0);
    for (std::int64_t v = 0; v < n; ++v) adj_offsets_[v + 1] = adj_offsets_[v] + degree[v];
    adjacency_.resize(adj_offsets_[n]);
    std::vector<std::int64_t> cursor(adj_offsets_.begin(), adj_offsets_.end() - 1);
    for (const auto& e : edges_) {
        adjacency_[cursor[e.u]++] = {e.v, e.weight};
        adjacency_[cursor[e.v]++] = {e.u, e.weight};
    }
    for (std::int64_t v = 0; v < n; ++v)
        std::sort(adjacency_.begin() + adj_offsets_[v], adjacency_.begin() + adj_offsets_[v + 1],
                  [](const Neighbor& a, const Neighbor& b) { return a.id < b.id; });
}

void ContactNetwork::check_id(std::int32_t id) const {
    if (id < 0 || id >= n_persons())
        throw DataError("person id " + std::to_string(id) + " out of range [0," +
                        std::to_string(n_persons()) + ")");
}

std::int32_t ContactNetwork::county_of(std::int32_t id) const {
    check_id(id);
    return persons_[id].county;
}

std::span<const Neighbor> ContactNetwork::neighbors(std::int32_t v) const {
    check_id(v);
    return {adjacency_.data() + adj_offsets_[v],
            static_cast<std::size_t>(adj_offsets_[v + 1] - adj_offsets_[v])};
}

namespace {

// Even partition of a county into max(1, round(size/mean)) households.
std::vector<std::int64_t> household_sizes(std::int64_t county_size, double mean_size) {
    const auto houses = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(county_size) / mean_size)));
    const std::int64_t base = county_size / houses;
    const std::int64_t extra = county_size % houses;
    std::vector<std::int64_t> sizes(houses, base);
    for (std::int64_t h = 0; h < extra; ++h) ++sizes[h];
    return sizes;
}

} // namespace

ContactNetwork generate_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(substream(seed, streams::network));

    const int counties = config.counties();
    const std::int64_t n = config.total_population();

    std::vector<Person> persons;
    persons.reserve(n);
    std::vector<std::int64_t> county_offset(counties, 0);
    std::vector<std::pair<std::int64_t, std::int64_t>> household_span; // [begin, end) person ids
    std::int32_t next_household = 0;
    std::vector<std::int32_t> household_of(n);
    {
        std::int64_t next_id = 0;
        for (int c = 0; c < counties; ++c) {
            county_offset[c] = next_id;
            for (std::int64_t size : household_sizes(config.county_sizes[c], config.mean_household_size)) {
                const std::int64_t begin = next_id;
                for (std::int64_t k = 0; k < size; ++k, ++next_id) {
                    persons.push_back({static_cast<std::int32_t>(next_id), c, next_household});
                    household_of[next_id] = next_household;
                }
                household_span.emplace_back(begin, next_id);
                ++next_household;
            }
        }
    }

    std::vector<ContactEdge> edges;
    // Household cliques.
    for (const auto& [begin, end] : household_span)
        for (std::int64_t u = begin; u < end; ++u)
            for (std::int64_t v = u + 1; v < end; ++v)
                edges.push_back({static_cast<std::int32_t>(u), static_cast<std::int32_t>(v),
                                 config.household_weight.sample(rng)});

    // External contacts; each person initiates ~mean_external_degree/2 stubs
    // so the realized external degree matches the configured mean.
    const double stubs_mean = config.mean_external_degree / 2.0;
    const auto whole = static_cast<std::int64_t>(std::floor(stubs_mean));
    const double fraction = stubs_mean - static_cast<double>(whole);
    constexpr int max_retries = 64;
    for (std::int64_t u = 0; u < n; ++u) {
        std::int64_t stubs = whole + (rng.uniform01() < fraction ? 1 : 0);
        for (std::int64_t s = 0; s < stubs; ++s) {
            int target_county = persons[u].county;
            if (counties > 1 && rng.uniform01() < config.cross_county_mix) {
                auto other = static_cast<int>(rng.below(static_cast<std::uint64_t>(counties - 1)));
                if (other >= target_county) ++other;
                target_county = other;
            }
            const std::int64_t pool = config.county_sizes[target_county];
            std::int64_t v = -1;
            for (int attempt = 0; attempt < max_retries; ++attempt) {
                const std::int64_t cand = county_offset[target_county] +
                                          static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(pool)));
                if (cand != u && household_of[cand] != household_of[u]) {
                    v = cand;
                    break;
                }
            }
            if (v < 0) continue; // no eligible partner (e.g. single-household county)
            const auto a = static_cast<std::int32_t>(std::min(u, v));
            const auto b = static_cast<std::int32_t>(std::max(u, v));
            edges.push_back({a, b, config.external_weight.sample(rng)});
        }
    }

    // Merge duplicate pairs by summing weights; keeps one edge per pair.
    std::sort(edges.begin(), edges.end(), [](const ContactEdge& a, const ContactEdge& b) {
        return a.u != b.u ? a.u < b.u : a.v < b.v;
    });
    std::vector<ContactEdge> merged;
    merged.reserve(edges.size());
    for (const auto& e : edges) {
        if (!merged.empty() && merged.back().u == e.u && merged.back().v == e.v)
            merged.back().weight += e.weight;
        else
            merged.push_back(e);
    }

    return ContactNetwork(std::move(persons), std::move(merged), counties);
}

namespace {

std::string header_line(std::int64_t n, int k, std::uint64_t hash) {
    return "# epiforge-network v1 N=" + std::to_string(n) + " K=" + std::to_string(k) +
           " config=" + io::to_hex(hash);
}

std::pair<std::int64_t, int> parse_header(const std::string& line, const std::string& file) {
    std::int64_t n = -1;
    int k = -1;
    std::istringstream in(line);
    std::string token;
    while (in >> token) {
        if (token.rfind("N=", 0) == 0) n = std::stoll(token.substr(2));
        if (token.rfind("K=", 0) == 0) k = std::stoi(token.substr(2));
    }
    if (line.rfind("# epiforge-network", 0) != 0 || n < 0 || k < 1)
        throw DataError("bad network header in " + file);
    return {n, k};
}

} // namespace

void save_network(const ContactNetwork& network, const NetworkConfig& config, std::uint64_t seed,
                  const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::uint64_t hash = config_hash(config, seed);
    const std::string header = header_line(network.n_persons(), network.n_counties(), hash);

    std::ostringstream persons;
    persons << header << "\n";
    for (const auto& p : network.persons())
        persons << p.id << "\t" << p.county << "\t" << p.household << "\n";
    io::write_file(dir / "persons.tsv", persons.str());

    std::ostringstream edges;
    edges << header << "\n";
    for (const auto& e : network.edges())
        edges << e.u << "\t" << e.v << "\t" << io::format_double(e.weight) << "\n";
    io::write_file(dir / "edges.tsv", edges.str());
}

ContactNetwork load_network(const std::filesystem::path& dir) {
    const auto persons_path = dir / "persons.tsv";
    const auto edges_path = dir / "edges.tsv";
    const auto person_lines = io::split_lines(io::read_file(persons_path));
    const auto edge_lines = io::split_lines(io::read_file(edges_path));
    if (person_lines.empty() || edge_lines.empty())
        throw DataError("truncated network files in " + dir.string());

    const auto [n, k] = parse_header(person_lines.front(), persons_path.string());
    parse_header(edge_lines.front(), edges_path.string());

    std::vector<Person> persons;
    persons.reserve(n);
    for (std::size_t i = 1; i < person_lines.size(); ++i) {
        const auto fields = io::split(person_lines[i], '\t');
        if (fields.size() != 3) throw DataError("bad person record: '" + person_lines[i] + "'");
        persons.push_back({static_cast<std::int32_t>(io::parse_int(fields[0])),
                           static_cast<std::int32_t>(io::parse_int(fields[1])),
                           static_cast<std::int32_t>(io::parse_int(fields[2]))});
    }
    if (static_cast<std::int64_t>(persons.size()) != n)
        throw DataError("person count mismatch in " + persons_path.string());

    std::vector<ContactEdge> edges;
    edges.reserve(edge_lines.size() - 1);
    for (std::size_t i = 1; i < edge_lines.size(); ++i) {
        const auto fields = io::split(edge_lines[i], '\t');
        if (fields.size() != 3) throw DataError("bad edge record: '" + edge_lines[i] + "'");
        edges.push_back({static_cast<std::int32_t>(io::parse_int(fields[0])),
                         static_cast<std::int32_t>(io::parse_int(fields[1])),
                         io::parse_double(fields[2])});
    }
    return ContactNetwork(std::move(persons), std::move(edges), k);
}

namespace {

WeightDist weight_dist_from_json(const nlohmann::json& j, const std::string& label) {
    if (!j.is_object() || !j.contains("kind"))
        throw ConfigError(label + ": expected object with 'kind'");
    const std::string kind = j.at("kind");
    if (kind == "constant") return WeightDist::constant(j.at("value").get<double>());
    if (kind == "uniform")
        return WeightDist::uniform(j.at("lo").get<double>(), j.at("hi").get<double>());
    throw ConfigError(label + ": unknown weight kind '" + kind + "'");
}

} // namespace

NetworkConfig network_config_from_json(const std::filesystem::path& file) {
    const auto j = io::read_json(file);
    NetworkConfig config;
    try {
        config.county_sizes = j.at("county_sizes").get<std::vector<std::int64_t>>();
        config.mean_household_size = j.value("mean_household_size", config.mean_household_size);
        config.mean_external_degree = j.value("mean_external_degree", config.mean_external_degree);
        config.cross_county_mix = j.value("cross_county_mix", config.cross_county_mix);
        if (j.contains("household_weight"))
            config.household_weight = weight_dist_from_json(j.at("household_weight"), "household_weight");
        if (j.contains("external_weight"))
            config.external_weight = weight_dist_from_json(j.at("external_weight"), "external_weight");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("network config " + file.string() + ": " + e.what());
    }
    config.validate();
    return config;
}

} // namespace epiforge::net
