//! AP-antenna to UE association.
//!
//! Every antenna carries exactly one UE's stream, and every UE must be served
//! by at least one antenna somewhere in the network. [`aga`] is the greedy
//! distance heuristic, [`nua`] the nearest-UE baseline and
//! [`brute_force_assoc`] the exhaustive oracle for small instances.
//!
//! Ties are always broken by the lowest `(l, u, k)` index tuple.

use crate::scenario::Layout;
use crate::{Error, Result};

/// Upper bound on the number of row-feasible matrices enumerated by
/// [`brute_force_assoc`].
pub const BRUTE_FORCE_LIMIT: f64 = 1e6;

/// Binary association `a[l][u][k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationMatrix {
    a: Vec<Vec<Vec<bool>>>,
}

impl AssociationMatrix {
    pub fn zeros(aps: usize, antennas: usize, users: usize) -> Self {
        Self { a: vec![vec![vec![false; users]; antennas]; aps] }
    }

    /// From the UE index served by each antenna, `choices[l][u]`.
    pub fn from_choices(choices: &[Vec<usize>], users: usize) -> Self {
        let a = choices
            .iter()
            .map(|ap| {
                ap.iter()
                    .map(|&k| {
                        let mut row = vec![false; users];
                        row[k] = true;
                        row
                    })
                    .collect()
            })
            .collect();
        Self { a }
    }

    pub fn from_bits(a: Vec<Vec<Vec<bool>>>) -> Self {
        Self { a }
    }

    pub fn num_aps(&self) -> usize {
        self.a.len()
    }

    pub fn antennas(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    pub fn users(&self) -> usize {
        self.a.first().and_then(|ap| ap.first()).map_or(0, Vec::len)
    }

    pub fn get(&self, l: usize, u: usize, k: usize) -> bool {
        self.a[l][u][k]
    }

    pub fn set(&mut self, l: usize, u: usize, k: usize, value: bool) {
        self.a[l][u][k] = value;
    }

    /// The U x K block of AP `l`.
    pub fn block(&self, l: usize) -> &[Vec<bool>] {
        &self.a[l]
    }

    /// UE served by antenna `(l, u)` if its row has exactly one entry.
    pub fn served_user(&self, l: usize, u: usize) -> Option<usize> {
        let mut it = self.a[l][u].iter().enumerate().filter(|(_, &b)| b);
        match (it.next(), it.next()) {
            (Some((k, _)), None) => Some(k),
            _ => None,
        }
    }

    /// Number of antennas serving each UE.
    pub fn coverage(&self) -> Vec<usize> {
        let mut count = vec![0; self.users()];
        for ap in &self.a {
            for row in ap {
                for (k, &b) in row.iter().enumerate() {
                    count[k] += b as usize;
                }
            }
        }
        count
    }

    /// Check row feasibility (exactly one UE per antenna) and coverage.
    pub fn validate(&self) -> Result<()> {
        for (l, ap) in self.a.iter().enumerate() {
            for (u, row) in ap.iter().enumerate() {
                let ones = row.iter().filter(|&&b| b).count();
                if ones != 1 {
                    return Err(Error::InfeasibleAssociation(format!("antenna ({l}, {u}) serves {ones} users")));
                }
            }
        }
        if let Some(k) = self.coverage().iter().position(|&c| c == 0) {
            return Err(Error::InfeasibleAssociation(format!("user {k} is not served")));
        }
        Ok(())
    }

    pub fn is_feasible(&self) -> bool {
        self.validate().is_ok()
    }
}

/// AP-antenna to UE distances `d[l][u][k]`, m.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTensor {
    pub d: Vec<Vec<Vec<f64>>>,
}

impl DistanceTensor {
    pub fn new(d: Vec<Vec<Vec<f64>>>) -> Self {
        Self { d }
    }

    pub fn num_aps(&self) -> usize {
        self.d.len()
    }

    pub fn antennas(&self) -> usize {
        self.d.first().map_or(0, Vec::len)
    }

    pub fn users(&self) -> usize {
        self.d.first().and_then(|ap| ap.first()).map_or(0, Vec::len)
    }

    /// AP-level distance: the closest of the AP's antennas.
    fn ap_distance(&self, l: usize, k: usize) -> f64 {
        self.d[l].iter().map(|row| row[k]).fold(f64::INFINITY, f64::min)
    }
}

pub fn distance_tensor(layout: &Layout) -> DistanceTensor {
    let d = (0..layout.ap_positions.len())
        .map(|l| {
            (0..layout.antenna_offsets[l].len())
                .map(|u| {
                    let p = layout.antenna_position(l, u);
                    layout.ue_positions.iter().map(|ue| nalgebra::distance(&p, ue)).collect()
                })
                .collect()
        })
        .collect();
    DistanceTensor { d }
}

/// Σ a_{l,u,k} d_{l,u,k} for a feasible association.
pub fn association_cost(assoc: &AssociationMatrix, dist: &DistanceTensor) -> Result<f64> {
    check_shapes(assoc, dist)?;
    assoc.validate()?;
    let mut total = 0.0;
    for l in 0..assoc.num_aps() {
        for u in 0..assoc.antennas() {
            for k in 0..assoc.users() {
                if assoc.get(l, u, k) {
                    total += dist.d[l][u][k];
                }
            }
        }
    }
    Ok(total)
}

fn check_shapes(assoc: &AssociationMatrix, dist: &DistanceTensor) -> Result<()> {
    let a = (assoc.num_aps(), assoc.antennas(), assoc.users());
    let d = (dist.num_aps(), dist.antennas(), dist.users());
    if a != d {
        return Err(Error::DimensionMismatch(format!("association is {a:?} but distances are {d:?}")));
    }
    Ok(())
}

fn check_capacity(dist: &DistanceTensor) -> Result<()> {
    let antennas = dist.num_aps() * dist.antennas();
    let users = dist.users();
    if users == 0 || antennas < users {
        return Err(Error::InsufficientAntennas { antennas, users });
    }
    Ok(())
}

/// Greedy antenna association.
///
/// Phase one covers every UE once: it repeatedly takes the closest remaining
/// (AP, uncovered UE) pair, binds the lowest-index free antenna of that AP,
/// and retires the AP when all its antennas are bound. Phase two hands each
/// AP's idle antennas to its nearest UEs in distance order, wrapping around
/// when there are more idle antennas than UEs.
pub fn aga(dist: &DistanceTensor) -> Result<AssociationMatrix> {
    check_capacity(dist)?;
    let (aps, antennas, users) = (dist.num_aps(), dist.antennas(), dist.users());
    let mut choice: Vec<Vec<Option<usize>>> = vec![vec![None; antennas]; aps];
    let mut covered = vec![false; users];

    for _ in 0..users {
        let mut best: Option<(f64, usize, usize)> = None;
        for (l, ap_choice) in choice.iter().enumerate() {
            if ap_choice.iter().all(Option::is_some) {
                continue;
            }
            for k in (0..users).filter(|&k| !covered[k]) {
                let d = ap_choice
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.is_none())
                    .map(|(u, _)| dist.d[l][u][k])
                    .fold(f64::INFINITY, f64::min);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, l, k));
                }
            }
        }
        let (_, l, k) = best.expect("capacity check guarantees a free antenna");
        let u = choice[l].iter().position(Option::is_none).expect("AP still has a free antenna");
        choice[l][u] = Some(k);
        covered[k] = true;
    }

    for (l, ap_choice) in choice.iter_mut().enumerate() {
        let mut ranked: Vec<usize> = (0..users).collect();
        ranked.sort_by(|&a, &b| dist.ap_distance(l, a).total_cmp(&dist.ap_distance(l, b)).then(a.cmp(&b)));
        let mut next = ranked.iter().cycle();
        for slot in ap_choice.iter_mut().filter(|c| c.is_none()) {
            *slot = next.next().copied();
        }
    }

    let choices: Vec<Vec<usize>> =
        choice.into_iter().map(|ap| ap.into_iter().map(|c| c.expect("all antennas bound")).collect()).collect();
    Ok(AssociationMatrix::from_choices(&choices, users))
}

/// Nearest-UE association with a coverage repair pass.
///
/// Each antenna first picks its nearest UE. Then, for every uncovered UE in
/// index order, the nearest antenna whose current UE is served by at least
/// one other antenna is moved over.
pub fn nua(dist: &DistanceTensor) -> Result<AssociationMatrix> {
    check_capacity(dist)?;
    let (aps, antennas, users) = (dist.num_aps(), dist.antennas(), dist.users());
    let mut choice: Vec<Vec<usize>> = (0..aps)
        .map(|l| (0..antennas).map(|u| argmin(&dist.d[l][u])).collect())
        .collect();
    let mut count = vec![0usize; users];
    for ap in &choice {
        for &k in ap {
            count[k] += 1;
        }
    }

    for k in 0..users {
        if count[k] > 0 {
            continue;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for l in 0..aps {
            for u in 0..antennas {
                if count[choice[l][u]] < 2 {
                    continue;
                }
                let d = dist.d[l][u][k];
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, l, u));
                }
            }
        }
        let (_, l, u) = best.expect("with more antennas than users some user is served twice");
        count[choice[l][u]] -= 1;
        choice[l][u] = k;
        count[k] += 1;
    }
    Ok(AssociationMatrix::from_choices(&choice, users))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive minimum-cost feasible association.
///
/// Candidates are enumerated as choice vectors (UE per antenna, antennas in
/// `(l, u)` order) in lexicographic order; the first minimum wins.
pub fn brute_force_assoc(dist: &DistanceTensor) -> Result<(AssociationMatrix, f64)> {
    check_capacity(dist)?;
    let (aps, antennas, users) = (dist.num_aps(), dist.antennas(), dist.users());
    let slots = aps * antennas;
    let candidates = (users as f64).powi(slots as i32);
    if candidates > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(candidates));
    }
    let flat: Vec<&[f64]> = dist.d.iter().flat_map(|ap| ap.iter().map(Vec::as_slice)).collect();

    let mut digits = vec![0usize; slots];
    let mut count = vec![0usize; users];
    count[0] = slots;
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if count.iter().all(|&c| c > 0) {
            let cost: f64 = digits.iter().zip(&flat).map(|(&k, row)| row[k]).sum();
            if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                best = Some((cost, digits.clone()));
            }
        }
        // odometer increment, last slot fastest
        let mut i = slots;
        loop {
            if i == 0 {
                let (cost, digits) = best.expect("capacity check guarantees a feasible matrix");
                let choices: Vec<Vec<usize>> = digits.chunks(antennas).map(<[usize]>::to_vec).collect();
                return Ok((AssociationMatrix::from_choices(&choices, users), cost));
            }
            i -= 1;
            count[digits[i]] -= 1;
            if digits[i] + 1 < users {
                digits[i] += 1;
                count[digits[i]] += 1;
                break;
            }
            digits[i] = 0;
            count[0] += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_scenario, ScenarioConfig};
    use proptest::prelude::*;

    fn tensor(aps: usize, antennas: usize, users: usize, values: &[f64]) -> DistanceTensor {
        let mut it = values.iter().copied();
        DistanceTensor::new(
            (0..aps)
                .map(|_| (0..antennas).map(|_| (0..users).map(|_| it.next().unwrap()).collect()).collect())
                .collect(),
        )
    }

    #[test]
    fn vertical_offset_distance() {
        let cfg = ScenarioConfig {
            num_aps: 1,
            antennas_per_ap: 1,
            num_users: 1,
            area_side_m: 0.0,
            ..Default::default()
        };
        let d = distance_tensor(&build_scenario(&cfg).unwrap());
        assert!((d.d[0][0][0] - 13.35).abs() < 1e-12);
    }

    #[test]
    fn distance_spot_check() {
        let cfg = ScenarioConfig::default();
        let layout = build_scenario(&cfg).unwrap();
        let d = distance_tensor(&layout);
        let a = layout.antenna_position(3, 1);
        let ue = layout.ue_positions[2];
        let hand = ((a.x - ue.x).powi(2) + (a.y - ue.y).powi(2) + (a.z - ue.z).powi(2)).sqrt();
        assert_eq!(d.d[3][1][2], hand);
    }

    #[test]
    fn cost_examples() {
        let d = tensor(2, 2, 1, &[10.0; 4]);
        let a = AssociationMatrix::from_choices(&[vec![0, 0], vec![0, 0]], 1);
        assert_eq!(association_cost(&a, &d).unwrap(), 40.0);
        let zero = AssociationMatrix::zeros(2, 2, 1);
        assert!(matches!(association_cost(&zero, &d), Err(Error::InfeasibleAssociation(_))));
    }

    #[test]
    fn aga_single_user_takes_everything() {
        let d = tensor(3, 2, 1, &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let a = aga(&d).unwrap();
        assert_eq!(a, AssociationMatrix::from_choices(&[vec![0, 0], vec![0, 0], vec![0, 0]], 1));
        assert_eq!(nua(&d).unwrap(), a);
    }

    #[test]
    fn aga_diagonal_instance() {
        let d = tensor(2, 1, 2, &[5.0, 9.0, 9.0, 5.0]);
        let a = aga(&d).unwrap();
        assert_eq!(a, AssociationMatrix::from_choices(&[vec![0], vec![1]], 2));
        let (best, cost) = brute_force_assoc(&d).unwrap();
        assert_eq!(best, a);
        assert_eq!(cost, 10.0);
    }

    #[test]
    fn aga_phase_two_spreads_idle_antennas() {
        // one AP, four antennas, two users: phase one covers UE 1 then UE 0,
        // phase two hands the idle antennas out in distance order
        let d = tensor(1, 4, 2, &[3.0, 1.0, 3.0, 1.0, 3.0, 1.0, 3.0, 1.0]);
        let a = aga(&d).unwrap();
        assert_eq!(a, AssociationMatrix::from_choices(&[vec![1, 0, 1, 0]], 2));
    }

    #[test]
    fn insufficient_antennas() {
        let d = tensor(1, 1, 2, &[1.0, 2.0]);
        assert!(matches!(aga(&d), Err(Error::InsufficientAntennas { antennas: 1, users: 2 })));
        assert!(matches!(nua(&d), Err(Error::InsufficientAntennas { .. })));
        assert!(matches!(brute_force_assoc(&d), Err(Error::InsufficientAntennas { .. })));
    }

    #[test]
    fn nua_repair_gives_second_user_one_antenna() {
        // UE 0 is nearest to all four antennas
        let d = tensor(2, 2, 2, &[1.0, 4.0, 1.5, 3.0, 2.0, 6.0, 2.5, 5.0]);
        let a = nua(&d).unwrap();
        assert_eq!(a.coverage(), vec![3, 1]);
        // the moved antenna is the one closest to UE 1: (0, 1) at 3 m
        assert_eq!(a.served_user(0, 1), Some(1));
    }

    #[test]
    fn brute_force_trivial() {
        let d = tensor(1, 1, 1, &[2.5]);
        let (a, cost) = brute_force_assoc(&d).unwrap();
        assert_eq!(a, AssociationMatrix::from_choices(&[vec![0]], 1));
        assert_eq!(cost, 2.5);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let d = tensor(4, 4, 3, &[1.0; 48]);
        assert!(matches!(brute_force_assoc(&d), Err(Error::InstanceTooLarge(_))));
    }

    fn instance() -> impl Strategy<Value = DistanceTensor> {
        (1usize..=3, 1usize..=2, 1usize..=3)
            .prop_filter("enough antennas", |(l, u, k)| l * u >= *k)
            .prop_flat_map(|(l, u, k)| {
                proptest::collection::vec(1.0f64..200.0, l * u * k).prop_map(move |v| tensor(l, u, k, &v))
            })
    }

    proptest! {
        #[test]
        fn producers_are_feasible_and_bounded_by_oracle(d in instance()) {
            let (_, best) = brute_force_assoc(&d).unwrap();
            for a in [aga(&d).unwrap(), nua(&d).unwrap()] {
                prop_assert!(a.is_feasible());
                prop_assert!(association_cost(&a, &d).unwrap() >= best - 1e-9);
            }
        }

        #[test]
        fn aga_is_deterministic(d in instance()) {
            prop_assert_eq!(aga(&d).unwrap(), aga(&d.clone()).unwrap());
        }
    }
}
