#include "raid0e/geometry.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace raid0e {

void ArrayGeometry::validate() const {
  if (n_data < 2)
    throw std::invalid_argument("geometry: data domain needs at least 2 disks");
  if (m_parity < 1)
    throw std::invalid_argument("geometry: parity domain needs at least 1 disk");
  if (sector_size == 0)
    throw std::invalid_argument("geometry: sector size must be positive");
  if (stripe_unit == 0 || stripe_unit % sector_size != 0)
    throw std::invalid_argument("geometry: stripe unit must be a positive multiple of the sector size");
  if (disk_capacity < sectors_per_unit())
    throw std::invalid_argument("geometry: disks too small for a single stripe");
}

BlockLocation map_lba(std::uint64_t lba, const ArrayGeometry& geom) {
  if (lba >= geom.volume_sectors())
    throw std::out_of_range("map_lba: lba " + std::to_string(lba) + " beyond volume end " +
                            std::to_string(geom.volume_sectors()));
  const std::uint64_t spu = geom.sectors_per_unit();
  const std::uint64_t unit = lba / spu; // global block index in volume order
  BlockLocation loc;
  loc.stripe = unit / geom.n_data;
  loc.domain = Domain::data;
  loc.disk_index = static_cast<std::uint32_t>(unit % geom.n_data);
  loc.offset = (loc.stripe * spu + lba % spu) * geom.sector_size;
  return loc;
}

BlockLocation parity_location(std::uint64_t stripe, const ArrayGeometry& geom) {
  if (stripe >= geom.total_stripes())
    throw std::out_of_range("parity_location: stripe " + std::to_string(stripe) + " beyond volume end");
  BlockLocation loc;
  loc.stripe = stripe;
  loc.domain = Domain::parity;
  loc.disk_index = static_cast<std::uint32_t>(stripe % geom.m_parity);
  loc.offset = (stripe / geom.m_parity) * geom.stripe_unit;
  return loc;
}

std::vector<BlockLocation> stripe_members(std::uint64_t stripe, const ArrayGeometry& geom) {
  if (stripe >= geom.total_stripes())
    throw std::out_of_range("stripe_members: stripe " + std::to_string(stripe) + " beyond volume end");
  std::vector<BlockLocation> members;
  members.reserve(geom.n_data + 1);
  for (std::uint32_t d = 0; d < geom.n_data; ++d) {
    BlockLocation loc;
    loc.stripe = stripe;
    loc.domain = Domain::data;
    loc.disk_index = d;
    loc.offset = stripe * geom.stripe_unit;
    members.push_back(loc);
  }
  members.push_back(parity_location(stripe, geom));
  return members;
}

Fraction capacity_efficiency_ratio(const ArrayGeometry& geom) {
  const std::uint64_t n = geom.n_data;
  const std::uint64_t total = geom.n_data + std::uint64_t(geom.m_parity);
  const std::uint64_t g = std::gcd(n, total);
  return Fraction{n / g, total / g};
}

double capacity_efficiency(const ArrayGeometry& geom) {
  const Fraction f = capacity_efficiency_ratio(geom);
  return static_cast<double>(f.num) / static_cast<double>(f.den);
}

} // namespace raid0e
