//! Registers a 50k-face humanoid to an articulated copy and prints timing
//! and accuracy.

use std::time::Instant;

use vvkit::body::{skin, JointPose};
use vvkit::registration::{register, RegistrationParams};
use vvkit::synthetic;

fn main() {
    env_logger::init();
    let faces: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let model = synthetic::humanoid(faces);
    let deg = 10f64.to_radians();
    let mut pose = model.zero_pose();
    for (j, s) in [(1, [deg, 0.0, 0.0]), (4, [0.0, deg, 0.0]), (5, [deg, 0.0, deg]), (8, [deg, 0.0, 0.0]), (9, [0.0, deg, 0.0]), (6, [0.0, -deg, 0.0]), (11, [deg, 0.0, 0.0]), (3, [0.0, deg, 0.0])] {
        pose.joints[j] = JointPose::from_scalars(s);
    }
    let target = skin(&model, &pose).unwrap();
    println!("faces {}", model.template.face_count());
    let t = Instant::now();
    let h = vvkit::defgraph::GraphHierarchy::build(&model.template, 0.025 * model.template.bbox_diagonal(), 3, 2.0, 4).unwrap();
    println!("hierarchy {:.2}s {:?}", t.elapsed().as_secs_f64(), h.levels.iter().map(|g| g.node_count()).collect::<Vec<_>>());
    let t2 = Instant::now();
    println!("error {:.2e} {:.2}s", vvkit::registration::registration_error(&model.template, &target).unwrap(), t2.elapsed().as_secs_f64());
    let t = Instant::now();
    let r = register(&model.template, &target, &RegistrationParams::default()).unwrap();
    let spent: f64 = r.levels.iter().map(|l| l.seconds).sum();
    println!("levels {spent:.2}s");
    println!("time {:.2}s rms {:.3e} converged {}", t.elapsed().as_secs_f64(), r.error, r.converged);
    for l in &r.levels {
        println!(
            "level {} nodes {} steps {} rejected {} corr {:?} {:.2}s last {:?}",
            l.level, l.nodes, l.steps.len(), l.rejected_steps, l.correspondences.last(), l.seconds, l.steps.last()
        );
    }
}
