#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "epiforge/rng.hpp"

namespace epiforge::net {

struct Person {
    std::int32_t id = 0;
    std::int32_t county = 0;
    std::int32_t household = 0;
};

// Undirected contact; weight is contact duration in minutes/day.
struct ContactEdge {
    std::int32_t u = 0;
    std::int32_t v = 0;
    double weight = 0.0;
};

struct Neighbor {
    std::int32_t id = 0;
    double weight = 0.0;
};

struct WeightDist {
    enum class Kind { Constant, Uniform };
    Kind kind = Kind::Constant;
    double lo = 480.0; // value when Constant, lower bound when Uniform
    double hi = 480.0;

    double sample(Rng& rng) const;
    void validate(const std::string& label) const;

    static WeightDist constant(double value) { return {Kind::Constant, value, value}; }
    static WeightDist uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
};

// Two-layer stand-in for a census-built population: households are cliques
// with long-duration contacts, plus per-person external contacts drawn mostly
// within the home county.
struct NetworkConfig {
    std::vector<std::int64_t> county_sizes;
    double mean_household_size = 3.0;
    // Expected number of external edges each person initiates; realized
    // external degree is about twice this.
    double mean_external_degree = 4.0;
    // Probability that an external contact lands in a different county.
    double cross_county_mix = 0.05;
    WeightDist household_weight = WeightDist::constant(480.0);
    WeightDist external_weight = WeightDist::uniform(30.0, 240.0);

    int counties() const { return static_cast<int>(county_sizes.size()); }
    std::int64_t total_population() const;
    void validate() const;
    std::string canonical_string() const;
};

class ContactNetwork {
public:
    ContactNetwork() = default;
    ContactNetwork(std::vector<Person> persons, std::vector<ContactEdge> edges, int counties);

    std::int64_t n_persons() const { return static_cast<std::int64_t>(persons_.size()); }
    std::int64_t n_edges() const { return static_cast<std::int64_t>(edges_.size()); }
    int n_counties() const { return static_cast<int>(county_populations_.size()); }

    const std::vector<Person>& persons() const { return persons_; }
    const std::vector<ContactEdge>& edges() const { return edges_; }
    const std::vector<std::int64_t>& county_populations() const { return county_populations_; }

    std::int32_t county_of(std::int32_t id) const;

    // Incident contacts of v in ascending neighbor id order.
    std::span<const Neighbor> neighbors(std::int32_t v) const;

private:
    void check_id(std::int32_t id) const;

    std::vector<Person> persons_;
    std::vector<ContactEdge> edges_;
    std::vector<std::int64_t> county_populations_;
    // CSR adjacency, built once; the network is immutable afterwards.
    std::vector<std::int64_t> adj_offsets_;
    std::vector<Neighbor> adjacency_;
};

ContactNetwork generate_network(const NetworkConfig& config, std::uint64_t seed);

std::uint64_t config_hash(const NetworkConfig& config, std::uint64_t seed);

// Two-file textual format: persons.tsv (id, county, household) and edges.tsv
// (u, v, weight), each starting with a header line carrying N, K and the
// generator config hash.
void save_network(const ContactNetwork& network, const NetworkConfig& config, std::uint64_t seed,
                  const std::filesystem::path& dir);
ContactNetwork load_network(const std::filesystem::path& dir);

NetworkConfig network_config_from_json(const std::filesystem::path& file);

} // namespace epiforge::net
