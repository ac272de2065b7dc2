/** three.js view: the current mesh, clickable anchor markers, and the
 * displacement heatmap. Geometry and scalars all come from the service. */

import * as THREE from 'three';
import { parseObj } from './objparse';
import { heatmapColors } from './heatmap';

export interface ViewerCallbacks {
  onRegionClick?: (region: number) => void;
}

export class Viewer {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private meshObject: THREE.Mesh | null = null;
  private anchorGroup = new THREE.Group();
  private raycaster = new THREE.Raycaster();
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private theta = 0.4;
  private phi = 1.2;
  private radius = 2.6;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly callbacks: ViewerCallbacks = {},
  ) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(38, 1, 0.01, 50);
    this.scene.background = new THREE.Color(0x10131a);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.45));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(1.5, 2.0, 2.5);
    this.scene.add(key);
    const rim = new THREE.DirectionalLight(0x88aaff, 0.4);
    rim.position.set(-2.0, 0.5, -1.5);
    this.scene.add(rim);
    this.scene.add(this.anchorGroup);
    this.bindInput();
    this.resize();
    window.addEventListener('resize', () => this.resize());
    this.animate();
  }

  private bindInput(): void {
    this.canvas.addEventListener('pointerdown', (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
    });
    window.addEventListener('pointerup', (e) => {
      if (this.dragging && Math.hypot(e.clientX - this.lastX, e.clientY - this.lastY) < 3) {
        this.pick(e);
      }
      this.dragging = false;
    });
    window.addEventListener('pointermove', (e) => {
      if (!this.dragging) return;
      this.theta -= (e.clientX - this.lastX) * 0.008;
      this.phi = Math.min(2.8, Math.max(0.3, this.phi - (e.clientY - this.lastY) * 0.008));
      this.lastX = e.clientX;
      this.lastY = e.clientY;
    });
    this.canvas.addEventListener('wheel', (e) => {
      e.preventDefault();
      this.radius = Math.min(8, Math.max(1.2, this.radius * (1 + e.deltaY * 0.001)));
    }, { passive: false });
  }

  private pick(e: PointerEvent): void {
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((e.clientX - rect.left) / rect.width) * 2 - 1,
      -((e.clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const hits = this.raycaster.intersectObjects(this.anchorGroup.children, false);
    if (hits.length > 0) {
      const region = hits[0].object.userData.region as number;
      this.callbacks.onRegionClick?.(region);
    }
  }

  private resize(): void {
    const w = this.canvas.clientWidth || 800;
    const h = this.canvas.clientHeight || 600;
    this.renderer.setSize(w, h, false);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  }

  private animate = (): void => {
    requestAnimationFrame(this.animate);
    const sp = Math.sin(this.phi);
    this.camera.position.set(
      this.radius * sp * Math.sin(this.theta),
      this.radius * Math.cos(this.phi),
      this.radius * sp * Math.cos(this.theta),
    );
    this.camera.lookAt(0, 0, 0);
    this.renderer.render(this.scene, this.camera);
  };

  /** Replace the displayed mesh; optional heatmap from the sidecar values. */
  showMesh(objText: string, displacement: number[] | null, heatmap: boolean): void {
    const parsed = parseObj(objText);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute('position', new THREE.BufferAttribute(parsed.positions, 3));
    geometry.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
    geometry.computeVertexNormals();
    let material: THREE.Material;
    if (heatmap && displacement && displacement.length === parsed.vertexCount) {
      geometry.setAttribute('color', new THREE.BufferAttribute(heatmapColors(displacement), 3));
      material = new THREE.MeshStandardMaterial({ vertexColors: true, roughness: 0.7 });
    } else {
      material = new THREE.MeshStandardMaterial({ color: 0xcfae92, roughness: 0.65 });
    }
    if (this.meshObject) {
      this.scene.remove(this.meshObject);
      this.meshObject.geometry.dispose();
      (this.meshObject.material as THREE.Material).dispose();
    }
    this.meshObject = new THREE.Mesh(geometry, material);
    this.scene.add(this.meshObject);
  }

  /** Anchor billboards; clicking one selects that region. */
  showAnchors(anchors: [number, number, number][], selected: number | null): void {
    this.anchorGroup.clear();
    anchors.forEach((pos, region) => {
      const sprite = new THREE.Sprite(new THREE.SpriteMaterial({
        color: region === selected ? 0xff4444 : 0x46c8ff,
        depthTest: false,
        opacity: 0.9,
        transparent: true,
      }));
      sprite.position.set(pos[0], pos[1], pos[2]);
      sprite.scale.setScalar(region === selected ? 0.055 : 0.035);
      sprite.userData.region = region;
      this.anchorGroup.add(sprite);
    });
  }
}
