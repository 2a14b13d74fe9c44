use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{aggregate_views, apply_speckle, fft_chain, synthesize_adc};
use super::{render_masks, PointTarget, RadarParams, ViewFrame};
use crate::error::{Error, Result};

/// Foreground classes; the discriminant is the mask label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ObjectClass {
    Pedestrian = 1,
    Cyclist = 2,
    Car = 3,
}

/// Class-typical radar signature.
struct Signature {
    rcs: f64,
    /// Half-lengths along range (m), radial velocity (m/s) and `sin θ`.
    half_size: [f64; 3],
    glints: usize,
    speed: (f64, f64),
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Pedestrian, ObjectClass::Cyclist, ObjectClass::Car];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Car => "car",
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }

    fn signature(self) -> Signature {
        match self {
            // limbs spread the Doppler return well beyond the body speed
            ObjectClass::Pedestrian => Signature { rcs: 1.0, half_size: [0.4, 1.2, 0.015], glints: 2, speed: (0.5, 2.0) },
            ObjectClass::Cyclist => Signature { rcs: 3.0, half_size: [0.8, 0.9, 0.025], glints: 3, speed: (2.0, 6.0) },
            ObjectClass::Car => Signature { rcs: 10.0, half_size: [2.0, 0.6, 0.05], glints: 5, speed: (3.0, 10.0) },
        }
    }
}

/// Class name of a mask label, `"background"` for 0.
pub fn class_name(id: u8) -> &'static str {
    ObjectClass::from_id(id).map_or("background", ObjectClass::name)
}

/// One moving object: a body scatterer plus secondary glints, all moving
/// with the same constant radial velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub class: ObjectClass,
    /// Range at frame 0 (m).
    pub range: f64,
    pub velocity: f64,
    pub angle: f64,
    pub rcs: f64,
    /// Footprint half-widths in bins: `[range, doppler, angle]`.
    pub extent: [f64; 3],
    /// Glint offsets from the body in bins (`[range, doppler, angle]`) and
    /// their reflectivity relative to the body.
    pub glints: Vec<([f64; 3], f64)>,
}

impl SceneObject {
    /// Object of `class` with the class-typical footprint and no glints.
    pub fn new(params: &RadarParams, class: ObjectClass, range: f64, velocity: f64, angle: f64) -> Self {
        let sig = class.signature();
        let extent = [
            params.range_bin(sig.half_size[0]),
            sig.half_size[1] / params.velocity_resolution(),
            sig.half_size[2] * params.n_angle as f64 / 2.0,
        ]
        .map(|e| e.max(1.0));
        SceneObject { class, range, velocity, angle, rcs: sig.rcs, extent, glints: Vec::new() }
    }

    /// Body target at `frame`.
    pub fn body(&self, params: &RadarParams, frame: usize) -> PointTarget {
        PointTarget {
            range: self.range + self.velocity * params.frame_period * frame as f64,
            velocity: self.velocity,
            angle: self.angle,
            rcs: self.rcs,
            class_id: self.class.id(),
            extent: self.extent,
        }
    }

    /// Glint targets at `frame` that fall inside the covered volume.
    pub fn glint_targets(&self, params: &RadarParams, frame: usize) -> Vec<PointTarget> {
        let body = self.body(params, frame);
        self.glints
            .iter()
            .map(|&([dr, dd, da], rel)| {
                let sin = (body.angle.sin() + da * 2.0 / params.n_angle as f64).clamp(-1.0, 1.0);
                PointTarget {
                    range: body.range + dr * params.range_resolution,
                    velocity: body.velocity + dd * params.velocity_resolution(),
                    angle: sin.asin(),
                    rcs: body.rcs * rel,
                    class_id: body.class_id,
                    extent: [1.0; 3],
                }
            })
            .filter(|t| params.check_coverage(t).is_ok())
            .collect()
    }
}

/// Objects present at frame 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scenario {
    pub objects: Vec<SceneObject>,
}

impl Scenario {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Scenario { objects }
    }

    /// Random objects of the given classes, placed so that each stays in
    /// coverage for `n_frames` frames when the range budget allows it.
    pub fn random_with_classes<R: Rng + ?Sized>(
        params: &RadarParams,
        classes: &[ObjectClass],
        n_frames: usize,
        rng: &mut R,
    ) -> Self {
        let objects = classes.iter().map(|&c| random_object(params, c, n_frames, rng)).collect();
        Scenario { objects }
    }

    /// One to `max_objects` objects of random classes.
    pub fn random<R: Rng + ?Sized>(params: &RadarParams, max_objects: usize, n_frames: usize, rng: &mut R) -> Self {
        let n = rng.random_range(1..=max_objects.max(1));
        let classes: Vec<ObjectClass> = (0..n).map(|_| ObjectClass::ALL[rng.random_range(0..3)]).collect();
        Self::random_with_classes(params, &classes, n_frames, rng)
    }
}

fn random_object<R: Rng + ?Sized>(params: &RadarParams, class: ObjectClass, n_frames: usize, rng: &mut R) -> SceneObject {
    let sig = class.signature();
    let vmax = params.max_speed() - params.velocity_resolution() * 2.0;
    let mut speed = rng.random_range(sig.speed.0..sig.speed.1).min(vmax);
    if rng.random_bool(0.5) {
        speed = -speed;
    }
    let travel = speed * params.frame_period * n_frames.saturating_sub(1) as f64;
    let margin = 3.0 * sig.half_size[0] + 2.0 * params.range_resolution;
    let (lo, hi) = (margin, params.max_range() - margin);
    let (mut start_lo, mut start_hi) = if travel >= 0.0 { (lo, hi - travel) } else { (lo - travel, hi) };
    if start_lo >= start_hi {
        // cannot stay in view the whole time: start inside and let it leave
        (start_lo, start_hi) = (lo, hi);
    }
    let range = rng.random_range(start_lo..start_hi);
    let max_sin = (params.max_angle.sin() - 2.0 * sig.half_size[2]).max(0.0);
    let angle = rng.random_range(-max_sin..=max_sin).asin();
    let mut obj = SceneObject::new(params, class, range, speed, angle);
    obj.glints = (0..sig.glints)
        .map(|_| {
            let off = obj.extent.map(|e| rng.random_range(-0.7..=0.7) * (e - 0.5).max(0.0));
            (off, rng.random_range(0.3..0.8))
        })
        .collect();
    obj
}

/// Seed of an independent stream for `(seed, tag)`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

/// Propagates, synthesizes, transforms, speckles and aggregates every frame.
/// Frame `t` draws its noise from `seed ^ t`. An object whose body leaves
/// coverage is dropped from that frame on.
pub fn simulate_sequence(params: &RadarParams, scenario: &Scenario, n_frames: usize, seed: u64) -> Result<Vec<ViewFrame>> {
    params.validate()?;
    let mut alive = vec![true; scenario.objects.len()];
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mut bodies = Vec::new();
        let mut scatterers = Vec::new();
        for (i, obj) in scenario.objects.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let body = obj.body(params, t);
            if let Err(e) = params.check_coverage(&body) {
                log::info!("frame {t}: dropping {} #{i}: {e}", obj.class.name());
                alive[i] = false;
                continue;
            }
            scatterers.extend(obj.glint_targets(params, t));
            scatterers.push(body.clone());
            bodies.push(body);
        }
        let frame_seed = seed ^ t as u64;
        let adc = synthesize_adc(params, &scatterers, derive_seed(frame_seed, 0))?;
        let rad = apply_speckle(&fft_chain(&adc, params.n_angle)?, derive_seed(frame_seed, 1));
        let views = aggregate_views(&rad);
        if ![&views.rd, &views.ad, &views.ra].iter().all(|v| v.all_finite()) {
            return Err(Error::Numerical(format!("non-finite view in frame {t}")));
        }
        let (rd_mask, ra_mask) = render_masks(params, &bodies);
        frames.push(ViewFrame {
            rd: views.rd.cast(),
            ad: views.ad.cast(),
            ra: views.ra.cast(),
            rd_mask,
            ra_mask,
            timestamp: t,
        });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar::range_support;

    fn small() -> RadarParams {
        RadarParams::with_extents(32, 32, 16)
    }

    #[test]
    fn class_ids_round_trip() {
        for c in ObjectClass::ALL {
            assert_eq!(ObjectClass::from_id(c.id()), Some(c));
        }
        assert_eq!(class_name(0), "background");
        assert_eq!(class_name(3), "car");
    }

    #[test]
    fn static_target_keeps_its_masks() {
        let p = small();
        let obj = SceneObject::new(&p, ObjectClass::Car, 20.0, 0.0, 0.2);
        let frames = simulate_sequence(&p, &Scenario::new(vec![obj]), 4, 11).unwrap();
        for f in &frames[1..] {
            assert_eq!(f.rd_mask, frames[0].rd_mask);
            assert_eq!(f.ra_mask, frames[0].ra_mask);
        }
        assert_ne!(frames[0].rd, frames[1].rd);
    }

    #[test]
    fn range_advances_by_velocity() {
        let p = small();
        let v = 4.0;
        let obj = SceneObject::new(&p, ObjectClass::Cyclist, 10.0, v, 0.0);
        let per_frame = p.range_bin(v * p.frame_period);
        for t in 0..6 {
            let b = obj.body(&p, t);
            let expected = p.range_bin(10.0) + per_frame * t as f64;
            assert!((p.range_bin(b.range) - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn leaving_object_is_dropped() {
        let p = small();
        let obj = SceneObject::new(&p, ObjectClass::Car, p.max_range() - 1.0, 10.0, 0.0);
        let frames = simulate_sequence(&p, &Scenario::new(vec![obj]), 3, 5).unwrap();
        assert!(frames[0].rd_mask.data().iter().any(|&c| c != 0));
        assert!(frames[2].rd_mask.data().iter().all(|&c| c == 0));
    }

    #[test]
    fn sequences_are_seeded() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sc = Scenario::random(&p, 3, 5, &mut rng);
        let a = simulate_sequence(&p, &sc, 3, 9).unwrap();
        assert_eq!(a, simulate_sequence(&p, &sc, 3, 9).unwrap());
        assert_ne!(a, simulate_sequence(&p, &sc, 3, 10).unwrap());
    }

    #[test]
    fn random_scenes_keep_views_consistent() {
        let p = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let sc = Scenario::random(&p, 3, 4, &mut rng);
            for f in simulate_sequence(&p, &sc, 4, rng.random()).unwrap() {
                assert_eq!(range_support(&f.rd_mask), range_support(&f.ra_mask));
            }
        }
    }
}
