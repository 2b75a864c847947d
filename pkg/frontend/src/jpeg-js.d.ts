declare module "jpeg-js" {
  export interface RawImageData {
    width: number;
    height: number;
    data: Uint8Array;
  }
  export function decode(
    data: Uint8Array | Buffer,
    options?: { useTArray?: boolean; maxMemoryUsageInMB?: number }
  ): RawImageData;
  export function encode(
    image: { width: number; height: number; data: Uint8Array | Buffer },
    quality?: number
  ): { width: number; height: number; data: Buffer };
}
