use irp_core::action::{ClothAction, ClothActionBox, RopeAction};
use irp_core::params::{ClothParams, RopeParams};
use irp_core::raster::{chamfer, rasterize, GridSpec};
use irp_core::sim::cloth::{execute_swing, ClothSim, START, THICKNESS};
use irp_core::sim::rope::{execute_whip, RopeSim, HORIZON, UPPER_ARM};
use irp_core::WorldVariant;

fn base_rope() -> RopeParams {
    RopeParams::new(1.0, 0.04)
}

fn grid_actions(levels: usize) -> Vec<[f64; 3]> {
    let l = |i: usize| i as f64 / (levels - 1) as f64;
    let mut out = Vec::new();
    for i in 0..levels {
        for j in 0..levels {
            for k in 0..levels {
                out.push([l(i), l(j), l(k)]);
            }
        }
    }
    out
}

#[test]
fn tip_speed_is_bounded_by_the_arm_sweep() {
    let p = base_rope();
    let w = WorldVariant::training();
    for u in grid_actions(5) {
        let a = RopeAction::denormalize(&u).unwrap();
        let bound = a.v * (UPPER_ARM + w.embodiment_link + p.length) * 3.0;
        let mut sim = RopeSim::new(&p, &a, &w, 0).unwrap();
        let mut fastest: f64 = 0.0;
        while sim.time() < HORIZON {
            sim.step().unwrap();
            let v = *sim.velocities().last().unwrap();
            assert!(sim.tip()[0].is_finite() && sim.tip()[1].is_finite());
            fastest = fastest.max(v[0].hypot(v[1]));
        }
        assert!(fastest <= bound, "{u:?}: {fastest} > {bound}");
    }
}

#[test]
fn apex_height_grows_with_speed() {
    let w = WorldVariant::training();
    // centre of the joint box
    let mid = |b: irp_core::action::Bound| 0.5 * (b.lo + b.hi);
    let (j2, j3) = (mid(RopeAction::J2), mid(RopeAction::J3));
    let mut last = f64::NEG_INFINITY;
    for i in 0..9 {
        let v = RopeAction::V.lo + (RopeAction::V.hi - RopeAction::V.lo) * i as f64 / 8.0;
        let a = RopeAction::new(v, j2, j3).unwrap();
        let t = execute_whip(&base_rope(), &a, &w, 0).unwrap();
        let apex = t.points(0).iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
        assert!(apex >= last, "j2 {j2} j3 {j3} v {v}: apex {apex} below {last}");
        last = apex;
    }
}

#[test]
fn drag_opens_a_gap_of_more_than_one_cell() {
    let spec = GridSpec::new(1);
    let a = RopeAction::new(3.14, 0.0, -200.0).unwrap();
    let train = execute_whip(&base_rope(), &a, &WorldVariant::training(), 0).unwrap();
    let deploy = execute_whip(&base_rope(), &a, &WorldVariant::deployment(), 0).unwrap();
    let gap = chamfer(&rasterize(&train, &spec).unwrap(), &rasterize(&deploy, &spec).unwrap()).unwrap();
    assert!(gap > spec.cell_size(), "gap {gap}");
}

fn cloth() -> ClothParams {
    ClothParams {
        n_grid: ClothParams::DESK_GRID,
        ..ClothParams::new(0.5, 0.8)
    }
}

fn swing(u: &[f64]) -> irp_core::Trajectory {
    let bx = ClothActionBox::default();
    let a = ClothAction::denormalize(u, &bx).unwrap();
    execute_swing(&cloth(), &a, &bx, &WorldVariant::training(), 0).unwrap()
}

#[test]
fn swing_output_shape() {
    for u in [[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0], [0.3, 0.7, 0.5, 0.2], [0.9, 0.1, 0.2, 0.6]] {
        let t = swing(&u);
        assert_eq!(t.n_tracks(), 9);
        assert!(t.is_finite());
        let kp = t.final_keypoints.as_ref().unwrap();
        assert_eq!(kp.len(), 9);
        for q in kp {
            assert!(q[1].abs() <= THICKNESS + 1e-9, "{u:?}: keypoint {q:?} off the table");
        }
    }
}

#[test]
fn swing_is_bit_identical() {
    let u = [0.4, 0.6, 0.8, 0.3];
    assert_eq!(swing(&u), swing(&u));
}

#[test]
fn vertical_drop_lands_under_the_release_point() {
    let bx = ClothActionBox::default();
    let a = ClothAction {
        p2y: START[0],
        p2z: bx.p2z.lo,
        p3y: START[0],
        dur: bx.dur.hi,
    };
    let c = cloth();
    let t = execute_swing(&c, &a, &bx, &WorldVariant::training(), 0).unwrap();
    let kp = t.final_keypoints.unwrap();
    for q in &kp {
        assert!((q[0] - START[0]).abs() <= c.size, "keypoint {q:?}");
    }
    let centroid = kp.iter().map(|q| q[0]).sum::<f64>() / 9.0;
    assert!((centroid - START[0]).abs() <= 0.5 * c.size, "centroid {centroid}");
}

#[test]
fn cloth_mass_and_strain() {
    let bx = ClothActionBox::default();
    let c = cloth();
    for u in [[1.0, 0.0, 1.0, 0.0], [0.5, 0.5, 0.5, 0.5]] {
        let a = ClothAction::denormalize(&u, &bx).unwrap();
        let mut sim = ClothSim::new(&c, &a, &bx, &WorldVariant::training(), 0).unwrap();
        assert!((sim.total_mass() / c.mass() - 1.0).abs() < 1e-9);
        let mut worst: f64 = 0.0;
        while sim.time() < a.dur + 1.0 {
            sim.step().unwrap();
            worst = worst.max(sim.max_structural_strain());
        }
        assert!(worst < 0.1, "{u:?}: strain {worst}");
    }
}
