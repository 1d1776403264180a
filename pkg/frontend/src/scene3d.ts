/** three.js view: obstacles with translucent safety envelopes and a robot
 * drawn from server-provided link poses (capsule-style segment proxies built
 * from the robot's link sample points; no client-side kinematics). */

import * as THREE from "three";
import type { LinkPose, RobotMeta, SceneDraft } from "./types.js";

export class SceneView {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private obstacles = new THREE.Group();
  private robot = new THREE.Group();
  private linkGroups: THREE.Group[] = [];
  private bones: THREE.Mesh[] = [];

  constructor(canvas: HTMLCanvasElement, private meta: RobotMeta) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(50, 4 / 3, 0.01, 20);
    this.camera.position.set(1.7, -1.5, 1.4);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(0, 0, 0.4);
    this.scene.background = new THREE.Color(0xf4f6f8);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.7));
    const sun = new THREE.DirectionalLight(0xffffff, 1.2);
    sun.position.set(2, -2, 3);
    this.scene.add(sun);
    const grid = new THREE.GridHelper(2, 20, 0xcccccc, 0xe0e0e0);
    grid.rotation.x = Math.PI / 2;
    this.scene.add(grid);
    this.scene.add(this.obstacles);
    this.scene.add(this.robot);
    this.buildRobot();
  }

  private buildRobot(): void {
    const pointGeo = new THREE.SphereGeometry(0.016, 12, 12);
    const pointMat = new THREE.MeshStandardMaterial({ color: 0x4a6fa5 });
    for (const pts of this.meta.link_points) {
      const group = new THREE.Group();
      for (const p of pts) {
        const ball = new THREE.Mesh(pointGeo, pointMat);
        ball.position.set(p[0], p[1], p[2]);
        group.add(ball);
      }
      this.linkGroups.push(group);
      this.robot.add(group);
    }
    const boneMat = new THREE.MeshStandardMaterial({ color: 0x2e4a76 });
    for (let i = 0; i < this.meta.dof; i++) {
      const bone = new THREE.Mesh(new THREE.CylinderGeometry(0.022, 0.022, 1, 10), boneMat);
      this.bones.push(bone);
      this.robot.add(bone);
    }
  }

  /** Re-render obstacle spheres plus their safety envelopes (radius + S). */
  setObstacles(draft: SceneDraft): void {
    this.obstacles.clear();
    const solid = new THREE.MeshStandardMaterial({ color: 0x3b78c4 });
    const envelope = new THREE.MeshStandardMaterial({
      color: 0x37b24d,
      transparent: true,
      opacity: 0.25,
      depthWrite: false,
    });
    for (const sphere of draft.spheres) {
      const body = new THREE.Mesh(new THREE.SphereGeometry(sphere.radius, 24, 24), solid);
      body.position.set(...sphere.center);
      this.obstacles.add(body);
      const safe = new THREE.Mesh(
        new THREE.SphereGeometry(sphere.radius + this.meta.safe_distance, 24, 24),
        envelope,
      );
      safe.position.set(...sphere.center);
      this.obstacles.add(safe);
    }
  }

  /** Pose every link group from server-computed poses (base excluded). */
  setPose(linkPoses: LinkPose[]): void {
    const origins: THREE.Vector3[] = linkPoses.map(
      (lp) => new THREE.Vector3(lp.p[0], lp.p[1], lp.p[2]),
    );
    for (let i = 0; i < this.linkGroups.length; i++) {
      const pose = linkPoses[i + 1];
      if (!pose) continue;
      this.linkGroups[i].position.set(pose.p[0], pose.p[1], pose.p[2]);
      this.linkGroups[i].quaternion.set(pose.q[0], pose.q[1], pose.q[2], pose.q[3]);
    }
    for (let i = 0; i < this.bones.length; i++) {
      const a = origins[i];
      const b = origins[i + 1];
      if (!a || !b) continue;
      const mid = a.clone().add(b).multiplyScalar(0.5);
      const dir = b.clone().sub(a);
      const len = Math.max(dir.length(), 1e-6);
      this.bones[i].position.copy(mid);
      this.bones[i].scale.set(1, len, 1);
      this.bones[i].quaternion.setFromUnitVectors(
        new THREE.Vector3(0, 1, 0),
        dir.normalize(),
      );
    }
  }

  resize(width: number, height: number): void {
    this.renderer.setSize(width, height, false);
    this.camera.aspect = width / height;
    this.camera.updateProjectionMatrix();
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }
}
